"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np

from simlearn.nn.model import cross_entropy, model_backward, model_forward


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def _impurity(labels, criterion):
    n = len(labels)
    k = sum(labels)
    ps = [k / n, (n - k) / n]
    if criterion == "gini":
        return 1.0 - sum(p * p for p in ps)
    return -sum(p * math.log2(p) for p in ps if p > 0)


def exhaustive_root_split(X, y, criterion, tol=1e-12):
    """Scan every feature and midpoint; keep the first best under (feature, threshold)."""
    n, d = X.shape
    parent = _impurity(list(y), criterion)
    best = None
    for j in range(d):
        vals = sorted(set(X[:, j].tolist()))
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2.0
            left = [int(v) for v, x in zip(y, X[:, j]) if x <= thr]
            right = [int(v) for v, x in zip(y, X[:, j]) if x > thr]
            child = (len(left) * _impurity(left, criterion)
                     + len(right) * _impurity(right, criterion)) / n
            dec = parent - child
            if dec > tol and (best is None or dec > best[0] + tol):
                best = (dec, j, thr)
    return best


def fd_check(model, X, y, dropout_mask=None, step=1e-3, floor=1e-7):
    """Worst relative error between analytic and central-difference gradients.

    Central differences at ``step`` and ``2 * step`` are Richardson-combined,
    which cancels the h^2 term and keeps round-off near eps / step instead of
    the eps / 1e-5 a single tiny step would cost.
    """

    def loss():
        p, _ = model_forward(model, X, train_mode=dropout_mask is not None,
                             dropout_mask=dropout_mask)
        return cross_entropy(p, y)

    def central(arr, idx, h):
        old = arr[idx]
        arr[idx] = old + h
        lp = loss()
        arr[idx] = old - h
        lm = loss()
        arr[idx] = old
        return (lp - lm) / (2 * h)

    probs, cache = model_forward(model, X, train_mode=dropout_mask is not None,
                                 dropout_mask=dropout_mask)
    grads = model_backward(model, probs, y, cache).named_arrays()
    worst = 0.0
    for name, arr in model.named_arrays().items():
        for idx in np.ndindex(arr.shape):
            num = (4.0 * central(arr, idx, step) - central(arr, idx, 2 * step)) / 3.0
            ana = grads[name][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


def independent_span(state_index, action_index, duration, c_s, c_e):
    grid = [[0.0] * c_e for _ in range(c_s)]
    for s, a, d in zip(state_index, action_index, duration):
        grid[s][a] += d
    total = math.fsum(duration)
    return np.array([v / total for row in grid for v in row])
