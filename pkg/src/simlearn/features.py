"""State-action sequence features and the Action-Span baseline encoding.

Each timestep becomes ``[one-hot state] ++ [duration share at the action slot]``
where the duration share is ``d_m / t_u`` (``t_u`` = total filtered duration),
so the action block of a full sequence sums to one. The Action-Span vector is
the same time mass summed into a flat ``c_s * c_e`` grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptySequence, ShapeMismatch
from .schema import CategorizedSequence

NORM_WINDOWS = ("truncated", "full")


@dataclass(frozen=True)
class StateActionFeatures:
    student_id: str
    matrix: np.ndarray
    label: int | None
    c_s: int
    c_e: int

    @property
    def seq_len(self) -> int:
        return self.matrix.shape[0]

    @property
    def f(self) -> int:
        return self.c_s + self.c_e


@dataclass(frozen=True)
class ActionSpanVector:
    vector: np.ndarray
    label: int | None
    student_id: str = ""


def encode_state_action(cat_seq: CategorizedSequence, label: int | None = None) -> StateActionFeatures:
    n = len(cat_seq)
    if n == 0:
        raise EmptySequence(f"student {cat_seq.student_id!r} has no events")
    c_s, c_e = cat_seq.c_s, cat_seq.c_e
    total = cat_seq.total_duration
    M = np.zeros((n, c_s + c_e))
    rows = np.arange(n)
    M[rows, cat_seq.state_index] = 1.0
    M[rows, c_s + cat_seq.action_index] = cat_seq.duration / total
    return StateActionFeatures(cat_seq.student_id, M, label, c_s, c_e)


def truncate(feat: StateActionFeatures, l: int, norm_window: str = "truncated") -> StateActionFeatures:
    """Keep the first ``l`` timesteps.

    With ``norm_window="truncated"`` the retained action block is rescaled so it
    sums to one over the visible window, i.e. shares of the time observed so
    far. ``"full"`` keeps the whole-session denominator untouched.
    Sequences of at most ``l`` steps are returned unchanged.
    """
    if l < 1:
        raise ValueError(f"horizon must be >= 1, got {l}")
    if norm_window not in NORM_WINDOWS:
        raise ValueError(f"norm_window must be one of {NORM_WINDOWS}")
    if feat.seq_len <= l:
        return feat
    M = feat.matrix[:l].copy()
    if norm_window == "truncated":
        block = M[:, feat.c_s:]
        block /= block.sum()
    return replace(feat, matrix=M)


def encode_action_span(cat_seq: CategorizedSequence, label: int | None = None) -> ActionSpanVector:
    if len(cat_seq) == 0:
        raise EmptySequence(f"student {cat_seq.student_id!r} has no events")
    v = np.zeros(cat_seq.c_s * cat_seq.c_e)
    np.add.at(v, cat_seq.state_index * cat_seq.c_e + cat_seq.action_index, cat_seq.duration)
    return ActionSpanVector(v / cat_seq.total_duration, label, cat_seq.student_id)


def span_from_state_action(M: np.ndarray, c_s: int) -> np.ndarray:
    """Marginalize a state-action matrix into the flat Action-Span grid."""
    return (M[:, :c_s].T @ M[:, c_s:]).ravel()


def pad_sequences(seqs: Sequence[np.ndarray], length: int | None = None):
    """Stack variable-length ``(T_i, f)`` arrays into ``(n, T, f)`` with zero rows.

    Returns the padded array and the integer lengths.
    """
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    T = int(lengths.max()) if length is None else length
    f = seqs[0].shape[1]
    out = np.zeros((len(seqs), T, f))
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s[:T]
    return out, np.minimum(lengths, T)


class StateActionEncoder(TransformerMixin, BaseEstimator):
    """Categorized sequences -> list of state-action matrices."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [encode_state_action(c).matrix for c in X]


class ActionSpanEncoder(TransformerMixin, BaseEstimator):
    """Categorized sequences (or state-action matrices) -> 2D Action-Span array.

    ``c_s`` is only needed when transforming state-action matrices.
    """

    def __init__(self, c_s=None):
        self.c_s = c_s

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        rows = []
        for item in X:
            if isinstance(item, CategorizedSequence):
                rows.append(encode_action_span(item).vector)
            else:
                if self.c_s is None:
                    raise ValueError("c_s is required to marginalize state-action matrices")
                rows.append(span_from_state_action(np.asarray(item), self.c_s))
        return np.vstack(rows)


class Truncator(TransformerMixin, BaseEstimator):
    """Early-prediction window over state-action matrices."""

    def __init__(self, horizon=30, c_s=4, norm_window="truncated"):
        self.horizon = horizon
        self.c_s = c_s
        self.norm_window = norm_window

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = []
        for M in X:
            M = np.asarray(M)
            feat = StateActionFeatures("", M, None, self.c_s, M.shape[1] - self.c_s)
            out.append(truncate(feat, self.horizon, self.norm_window).matrix)
        return out


@dataclass
class FeatureSet:
    """A cohort's features plus the header needed to interpret them.

    ``mode="sa"`` stores one ``(seq_len, f)`` matrix per student in ``matrices``;
    ``mode="span"`` stores one row per student in ``X``.
    """

    mode: str
    student_ids: list[str]
    labels: np.ndarray
    seq_lens: np.ndarray
    c_s: int
    c_e: int
    feature_names: list[str]
    matrices: list[np.ndarray] = field(default_factory=list)
    X: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.student_ids)

    @property
    def f(self) -> int:
        return self.c_s + self.c_e

    def span_matrix(self) -> np.ndarray:
        if self.mode == "span":
            return self.X
        return np.vstack([span_from_state_action(M, self.c_s) for M in self.matrices])

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return replace(
            self,
            student_ids=[self.student_ids[i] for i in idx],
            labels=self.labels[idx],
            seq_lens=self.seq_lens[idx],
            matrices=[self.matrices[i] for i in idx] if self.mode == "sa" else [],
            X=self.X[idx] if self.mode == "span" else None,
        )

    def save(self, path) -> None:
        header = {
            "mode": self.mode, "f": self.f, "c_s": self.c_s, "c_e": self.c_e,
            "feature_names": self.feature_names, "meta": self.meta,
        }
        if self.mode == "sa":
            rows = np.vstack(self.matrices) if self.matrices else np.zeros((0, self.f))
        else:
            rows = self.X
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.array(json.dumps(header, sort_keys=True)),
                student_ids=np.array(self.student_ids, dtype=str),
                labels=self.labels.astype("<i8"),
                seq_len=self.seq_lens.astype("<i8"),
                rows=np.ascontiguousarray(rows, dtype="<f8"),
            )

    @classmethod
    def load(cls, path) -> "FeatureSet":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            ids = [str(s) for s in z["student_ids"]]
            labels = z["labels"].astype(np.int64)
            seq_len = z["seq_len"].astype(np.int64)
            rows = z["rows"].astype(np.float64)
        if header["mode"] == "sa":
            if rows.shape[0] != seq_len.sum():
                raise ShapeMismatch("row count does not match the stored sequence lengths")
            bounds = np.concatenate([[0], np.cumsum(seq_len)])
            mats = [rows[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
            return cls("sa", ids, labels, seq_len, header["c_s"], header["c_e"],
                       header["feature_names"], matrices=mats, meta=header.get("meta", {}))
        return cls("span", ids, labels, seq_len, header["c_s"], header["c_e"],
                   header["feature_names"], X=rows, meta=header.get("meta", {}))


def build_feature_set(cat_seqs: Sequence[CategorizedSequence], labels: Sequence[int], schema,
                      mode: str = "sa", horizon: int | None = None,
                      norm_window: str = "truncated") -> FeatureSet:
    ids = [c.student_id for c in cat_seqs]
    feats = [encode_state_action(c, int(y)) for c, y in zip(cat_seqs, labels)]
    if horizon is not None:
        feats = [truncate(ft, horizon, norm_window) for ft in feats]
    seq_lens = np.array([ft.seq_len for ft in feats], dtype=np.int64)
    meta = {"schema": schema.name, "truncate": horizon, "norm_window": norm_window}
    labels = np.asarray(labels, dtype=np.int64)
    if mode == "sa":
        return FeatureSet("sa", ids, labels, seq_lens, schema.c_s, schema.c_e,
                          schema.feature_names, matrices=[ft.matrix for ft in feats], meta=meta)
    if mode == "span":
        X = np.vstack([span_from_state_action(ft.matrix, schema.c_s) for ft in feats])
        return FeatureSet("span", ids, labels, seq_lens, schema.c_s, schema.c_e,
                          schema.span_names, X=X, meta=meta)
    raise ValueError(f"mode must be 'sa' or 'span', got {mode!r}")
