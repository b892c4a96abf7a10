"""Input validation helpers for sequence and tabular estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import EmptySequence, ShapeMismatch, SingleClassDataset


def check_sequences(X, n_features=None) -> list[np.ndarray]:
    """Validate a batch of variable-length feature matrices.

    Accepts a list of 2D arrays or a 3D array (all sequences full length).
    Returns a list of float64 arrays.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise ValueError("need at least one sequence")
    out = []
    for i, M in enumerate(X):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2:
            raise ShapeMismatch(f"sequence {i} must be 2D (seq_len, f), got shape {M.shape}")
        if M.shape[0] == 0:
            raise EmptySequence(f"sequence {i} is empty")
        if not np.all(np.isfinite(M)):
            raise ValueError(f"sequence {i} contains non-finite values")
        out.append(M)
    widths = {M.shape[1] for M in out}
    if len(widths) != 1:
        raise ShapeMismatch(f"sequences have different feature widths {sorted(widths)}")
    if n_features is not None and out[0].shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} features, got {out[0].shape[1]}")
    return out


def check_binary_labels(y, n=None, require_both=False) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatch("labels must be 1D")
    if n is not None and len(y) != n:
        raise ShapeMismatch(f"{n} samples but {len(y)} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    if require_both and len(np.unique(y)) < 2:
        raise SingleClassDataset("both classes must be present")
    return y


def check_matrix(X, n_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a 2D array, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    return X
