"""CART decision trees and bagged random forests for binary labels.

Candidate thresholds are midpoints between consecutive distinct values; a
sample goes left when ``x[feature] <= threshold``. Among equally good splits
the lower feature index wins, then the lower threshold.

Each node draws its feature subset from an RNG keyed by ``(seed, tree, node)``
where ``node`` is the heap index (root 1, children ``2i`` and ``2i + 1``). A
node's split therefore depends only on the samples that reach it, so a tree
grown deep can be cut back to any shallower ``max_depth`` / larger
``min_samples_split`` and equals the tree grown directly with those settings
(see :func:`predict_tree`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyNode, ShapeMismatch, SingleClassDataset
from .validation import check_binary_labels, check_matrix

CRITERIA = ("gini", "entropy")
_TOL = 1e-12


def impurity(counts, criterion: str = "gini") -> float:
    n0, n1 = (float(c) for c in counts)
    n = n0 + n1
    if n <= 0:
        raise EmptyNode("impurity of an empty node")
    p = np.array([n0 / n, n1 / n])
    if criterion == "gini":
        return float(1.0 - np.sum(p * p))
    if criterion == "entropy":
        p = p[p > 0]
        return float(-np.sum(p * np.log2(p)))
    raise ValueError(f"criterion must be one of {CRITERIA}")


def _weighted_child_impurity(n_left, pos_left, n_right, pos_right, criterion):
    """``n_l * I(left) + n_r * I(right)`` for arrays of candidate splits."""
    if criterion == "gini":
        return (2.0 * pos_left * (n_left - pos_left) / n_left
                + 2.0 * pos_right * (n_right - pos_right) / n_right)

    def part(n, k):
        out = np.zeros_like(n, dtype=float)
        for c in (k, n - k):
            nz = c > 0
            out[nz] -= c[nz] * np.log2(c[nz] / n[nz])
        return out

    return part(n_left, pos_left) + part(n_right, pos_right)


@dataclass
class TreeNode:
    counts: np.ndarray
    depth: int
    node_id: int = 1
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def proba(self) -> float:
        return float(self.counts[1] / self.counts.sum())

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend((node.right, node.left))


@dataclass
class ForestConfig:
    n_trees: int = 11
    criterion: str = "gini"
    max_depth: int | None = 7
    min_samples_split: int = 5
    bootstrap: bool = True
    max_features: int | str | None = "sqrt"
    seed: int = 0


GRID = {
    "n_trees": (3, 7, 9, 11, 13, 15, 17),
    "criterion": ("gini", "entropy"),
    "max_depth": (5, 7, 9, 11, 13),
    "min_samples_split": (3, 5, 7, 9, 11),
}


def resolve_max_features(max_features, d: int) -> int:
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, math.floor(math.sqrt(d)))
    k = int(max_features)
    if not 1 <= k <= d:
        raise ValueError(f"max_features must lie in [1, {d}]")
    return k


def best_split(X, y, features, criterion):
    """Best ``(decrease, feature, threshold)`` over ``features`` or ``None``.

    ``features`` must be sorted ascending; ties keep the earliest candidate.
    """
    n = len(y)
    total_pos = float(y.sum())
    parent = n * impurity((n - total_pos, total_pos), criterion)
    best = None
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        if len(cut) == 0:
            continue
        pos = np.cumsum(y[order], dtype=float)
        n_left = (cut + 1).astype(float)
        pos_left = pos[cut]
        child = _weighted_child_impurity(n_left, pos_left, n - n_left, total_pos - pos_left,
                                         criterion)
        k = int(np.argmin(child))
        decrease = (parent - child[k]) / n
        # argmin returns the first minimum: lowest threshold among exact ties
        if decrease > _TOL and (best is None or decrease > best[0] + _TOL):
            best = (decrease, int(j), float((xs[cut[k]] + xs[cut[k] + 1]) / 2.0))
    return best


def fit_tree(X, y, max_depth=None, min_samples_split=2, criterion="gini", max_features=None,
             seed=0, tree_index=0) -> TreeNode:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(y) < 1:
        raise EmptyNode("cannot fit a tree on zero samples")
    d = X.shape[1]
    k = resolve_max_features(max_features, d)
    max_depth = math.inf if max_depth is None else max_depth

    def grow(idx, depth, node_id):
        yy = y[idx]
        pos = int(yy.sum())
        node = TreeNode(np.array([len(idx) - pos, pos], dtype=np.int64), depth, node_id)
        if depth >= max_depth or len(idx) < min_samples_split or pos in (0, len(idx)):
            return node
        if k < d:
            rng = np.random.default_rng([seed, tree_index, node_id])
            feats = np.sort(rng.choice(d, size=k, replace=False))
        else:
            feats = np.arange(d)
        split = best_split(X[idx], yy, feats, criterion)
        if split is None:
            return node
        _, j, thr = split
        go_left = X[idx, j] <= thr
        node.feature, node.threshold = j, thr
        node.left = grow(idx[go_left], depth + 1, 2 * node_id)
        node.right = grow(idx[~go_left], depth + 1, 2 * node_id + 1)
        return node

    return grow(np.arange(len(y)), 0, 1)


def predict_tree(tree: TreeNode, X, max_depth=None, min_samples_split=None) -> np.ndarray:
    """Leaf probabilities of class 1, optionally reading the tree cut back.

    A node acts as a leaf once ``depth >= max_depth`` or it holds fewer than
    ``min_samples_split`` samples.
    """
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X))
    max_depth = math.inf if max_depth is None else max_depth
    mss = 0 if min_samples_split is None else min_samples_split

    def route(node, idx):
        if node.is_leaf or node.depth >= max_depth or node.n_samples < mss:
            out[idx] = node.proba
            return
        go_left = X[idx, node.feature] <= node.threshold
        if np.any(go_left):
            route(node.left, idx[go_left])
        if not np.all(go_left):
            route(node.right, idx[~go_left])

    route(tree, np.arange(len(X)))
    return out


def fit_forest(X, y, cfg: ForestConfig) -> list[TreeNode]:
    X = check_matrix(X)
    y = check_binary_labels(y, len(X))
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise SingleClassDataset("a forest needs at least two samples from both classes")
    n = len(y)
    trees = []
    for t in range(cfg.n_trees):
        if cfg.bootstrap:
            sample = np.random.default_rng([cfg.seed, t]).integers(0, n, size=n)
        else:
            sample = np.arange(n)
        trees.append(fit_tree(X[sample], y[sample], cfg.max_depth, cfg.min_samples_split,
                              cfg.criterion, cfg.max_features, cfg.seed, t))
    return trees


def predict_proba(forest: list[TreeNode], X, n_features=None, max_depth=None,
                  min_samples_split=None) -> np.ndarray:
    """Mean of member-tree leaf probabilities (class 1)."""
    X = check_matrix(X, n_features)
    return np.mean([predict_tree(t, X, max_depth, min_samples_split) for t in forest], axis=0)


def tree_depth(tree: TreeNode) -> int:
    return max(node.depth for node in tree.iter_nodes())


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged CART forest with per-node feature subsampling."""

    def __init__(self, n_trees=11, criterion="gini", max_depth=7, min_samples_split=5,
                 bootstrap=True, max_features="sqrt", random_state=0):
        self.n_trees = n_trees
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.max_features = max_features
        self.random_state = random_state

    def config(self) -> ForestConfig:
        return ForestConfig(self.n_trees, self.criterion, self.max_depth, self.min_samples_split,
                            self.bootstrap, self.max_features, self.random_state)

    def fit(self, X, y):
        X = check_matrix(X)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.trees_ = fit_forest(X, y, self.config())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        p1 = predict_proba(self.trees_, X, self.n_features_in_)
        return np.column_stack([1.0 - p1, p1])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


@dataclass
class GrownForest:
    """Trees grown at the loosest grid setting, readable at any tighter one."""

    trees: list[TreeNode]
    n_features: int
    meta: dict = field(default_factory=dict)

    def predict_proba(self, X, n_trees, max_depth, min_samples_split):
        if n_trees > len(self.trees):
            raise ValueError(f"only {len(self.trees)} trees were grown")
        return predict_proba(self.trees[:n_trees], X, self.n_features, max_depth,
                             min_samples_split)


    def grid_proba(self, X, n_trees, max_depths, min_samples_splits) -> dict:
        """``{(n, depth, split): proba}`` for every combination, in one pass per tree."""
        X = check_matrix(X, self.n_features)
        per_tree = []  # per tree: (len(depths), len(splits), n_samples)
        for tree in self.trees[: max(n_trees)]:
            P, N, leaf_k = _paths(tree, X)
            rows = np.arange(len(X))
            out = np.empty((len(max_depths), len(min_samples_splits), len(X)))
            for b, m in enumerate(min_samples_splits):
                small = N < m
                # first depth on the path whose node is too small to split
                k_small = np.where(small.any(axis=1), small.argmax(axis=1), leaf_k)
                stop = np.minimum(k_small, leaf_k)
                for a, d in enumerate(max_depths):
                    out[a, b] = P[rows, np.minimum(stop, d)]
            per_tree.append(out)
        csum = np.cumsum(per_tree, axis=0)
        res = {}
        for n in n_trees:
            for a, d in enumerate(max_depths):
                for b, m in enumerate(min_samples_splits):
                    res[(n, d, m)] = csum[n - 1, a, b] / n
        return res


def _paths(tree: TreeNode, X):
    """Per-sample root-to-leaf probabilities and node sizes, padded with the leaf."""
    n = len(X)
    depth = tree_depth(tree)
    P = np.empty((n, depth + 1))
    N = np.empty((n, depth + 1))
    leaf_k = np.empty(n, dtype=np.int64)

    def route(node, idx):
        P[idx, node.depth:] = node.proba
        N[idx, node.depth:] = node.n_samples
        if node.is_leaf:
            leaf_k[idx] = node.depth
            return
        go_left = X[idx, node.feature] <= node.threshold
        if np.any(go_left):
            route(node.left, idx[go_left])
        if not np.all(go_left):
            route(node.right, idx[~go_left])

    route(tree, np.arange(n))
    return P, N, leaf_k


def grow_for_grid(X, y, criterion, grid=GRID, max_features="sqrt", seed=0) -> GrownForest:
    """One forest per criterion that serves every (n_trees, depth, split) in the grid.

    Tree ``t`` uses the same bootstrap and node RNGs as in :func:`fit_forest`, so
    the first ``n`` trees read at ``(max_depth, min_samples_split)`` reproduce
    ``fit_forest`` with those settings exactly.
    """
    cfg = ForestConfig(max(grid["n_trees"]), criterion, max(grid["max_depth"]),
                       min(grid["min_samples_split"]), True, max_features, seed)
    X = check_matrix(X)
    return GrownForest(fit_forest(X, y, cfg), X.shape[1], {"criterion": criterion})


def save_forest(trees: list[TreeNode], path, header: dict) -> None:
    """Flat-array checkpoint: one row per node in pre-order."""
    import json

    rows_i, rows_f = [], []
    for t, tree in enumerate(trees):
        for node in tree.iter_nodes():
            rows_i.append([t, node.node_id, node.depth, -1 if node.is_leaf else node.feature,
                           node.counts[0], node.counts[1]])
            rows_f.append(np.nan if node.is_leaf else node.threshold)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps({"kind": "forest", **header}, sort_keys=True)),
                 nodes=np.array(rows_i, dtype="<i8").reshape(-1, 6),
                 thresholds=np.array(rows_f, dtype="<f8"))


def load_forest(path) -> tuple[list[TreeNode], dict]:
    import json

    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        nodes, thresholds = z["nodes"], z["thresholds"]
    if header.get("kind") != "forest":
        raise ShapeMismatch(f"{path} is not a forest checkpoint")
    by_key = {}
    for (t, nid, depth, feat, c0, c1), thr in zip(nodes.tolist(), thresholds.tolist()):
        node = TreeNode(np.array([c0, c1], dtype=np.int64), depth, nid)
        if feat >= 0:
            node.feature, node.threshold = feat, thr
        by_key[(t, nid)] = node
    trees = []
    for (t, nid), node in sorted(by_key.items()):
        if not node.is_leaf:
            node.left = by_key[(t, 2 * nid)]
            node.right = by_key[(t, 2 * nid + 1)]
        if nid == 1:
            trees.append(node)
    return trees, header
