"""Attention heatmaps: per-student context matrices, normalized and averaged over time."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .exceptions import EmptyCohort, IoFailure, ShapeMismatch, WrongVariant
from .nn.layers import attention_forward
from .nn.model import ModelParams
from .validation import check_sequences

NORMS = ("l1", "minmax")
DISPLAY_HORIZON = {"beers_law": 150, "capacitor": 100}


def _attention_params(model):
    params = getattr(model, "model_", model)
    if not isinstance(params, ModelParams) or params.variant != "sa_gru":
        kind = getattr(params, "variant", type(params).__name__)
        raise WrongVariant(f"attention output needs an sa_gru model, got {kind}")
    return params.attention


def extract_attention_output(model, feat):
    """Context matrix ``(seq_len, f)`` of one student, or a list for a list of students.

    ``model`` is a fitted ``SAGRUClassifier`` or sa_gru ``ModelParams``.
    """
    att = _attention_params(model)
    single = isinstance(feat, np.ndarray) and feat.ndim == 2
    mats = check_sequences([feat] if single else feat, n_features=att.W_q.shape[0])
    out = [attention_forward(att, M)[0] for M in mats]
    return out[0] if single else out


def extract_attention_weights(model, feat):
    """The ``(seq_len, seq_len)`` attention weights, for inspection."""
    att = _attention_params(model)
    single = isinstance(feat, np.ndarray) and feat.ndim == 2
    mats = check_sequences([feat] if single else feat, n_features=att.W_q.shape[0])
    out = [attention_forward(att, M)[1] for M in mats]
    return out[0] if single else out


def normalize_scores(M, method: str = "l1") -> np.ndarray:
    """Absolute values scaled to unit total (``l1``) or onto [0, 1] (``minmax``).

    A constant-zero input maps to zeros under either method.
    """
    A = np.abs(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("scores must be finite")
    if method == "l1":
        total = A.sum()
        return A / total if total > 0 else np.zeros_like(A)
    if method == "minmax":
        lo, hi = (A.min(), A.max()) if A.size else (0.0, 0.0)
        return (A - lo) / (hi - lo) if hi > lo else np.zeros_like(A)
    raise ValueError(f"method must be one of {NORMS}")


@dataclass
class AttentionHeatmap:
    matrix: np.ndarray  # (T, f); NaN where no student is still active
    support: np.ndarray  # (T,) number of students with more than t steps
    feature_names: list[str]

    @property
    def horizon(self) -> int:
        return self.matrix.shape[0]


def average_heatmap(mats, T: int, feature_names=None) -> AttentionHeatmap:
    """Mean of per-student matrices over the students still active at each step."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if len(mats) == 0:
        raise EmptyCohort("no students to average")
    f = mats[0].shape[1]
    total = np.zeros((T, f))
    support = np.zeros(T, dtype=np.int64)
    for M in mats:
        if M.ndim != 2 or M.shape[1] != f:
            raise ShapeMismatch("all matrices need the same number of columns")
        n = min(len(M), T)
        total[:n] += M[:n]
        support[:n] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = total / support[:, None]
    matrix[support == 0] = np.nan
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(f)]
    if len(names) != f:
        raise ShapeMismatch(f"{len(names)} feature names for {f} columns")
    return AttentionHeatmap(matrix, support, names)


def attention_heatmap(model, mats, T: int, feature_names=None, method="l1") -> AttentionHeatmap:
    contexts = extract_attention_output(model, list(mats))
    return average_heatmap([normalize_scores(C, method) for C in contexts], T, feature_names)


def _open(path, mode="w"):
    try:
        return open(path, mode, newline="" if "b" not in mode else None, encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot open {path}: {e}") from e


def write_heatmap_csv(h: AttentionHeatmap, path) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *h.feature_names, "support"])
        for t in range(h.horizon):
            w.writerow([t, *(repr(float(v)) for v in h.matrix[t]), int(h.support[t])])


def read_heatmap_csv(path) -> AttentionHeatmap:
    with _open(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t" or rows[0][-1] != "support":
        raise ShapeMismatch(f"{path} is not a heatmap CSV")
    names = rows[0][1:-1]
    body = rows[1:]
    matrix = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), len(names))
    support = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return AttentionHeatmap(matrix, support, names)


def render_svg(h: AttentionHeatmap, cell_w=6, cell_h=16, bar_h=60) -> str:
    """Grayscale feature x timestep grid with the support histogram on top."""
    T, f = h.matrix.shape
    left, top, gap = 140, 10, 8
    width = left + T * cell_w + 10
    height = top + bar_h + gap + f * cell_h + 24
    finite = h.matrix[np.isfinite(h.matrix)]
    vmax = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    smax = max(int(h.support.max()), 1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left - 6}" y="{top + 10}" font-size="10" text-anchor="end" '
        f'font-family="sans-serif">students ({smax})</text>',
    ]
    for t in range(T):
        bh = bar_h * h.support[t] / smax
        out.append(f'<rect class="support" x="{left + t * cell_w}" y="{top + bar_h - bh:.3f}" '
                   f'width="{cell_w}" height="{bh:.3f}" fill="#4a6fa5"/>')
    y0 = top + bar_h + gap
    for j, name in enumerate(h.feature_names):
        out.append(f'<text x="{left - 6}" y="{y0 + j * cell_h + cell_h * 0.7:.1f}" font-size="10" '
                   f'text-anchor="end" font-family="sans-serif">{escape(name)}</text>')
        for t in range(T):
            v = h.matrix[t, j]
            if not math.isfinite(v):
                continue
            g = int(round(255 * (1.0 - min(max(v / vmax, 0.0), 1.0))))
            out.append(f'<rect class="cell" x="{left + t * cell_w}" y="{y0 + j * cell_h}" '
                       f'width="{cell_w}" height="{cell_h}" fill="rgb({g},{g},{g})"/>')
    out.append(f'<text x="{left}" y="{height - 6}" font-size="10" '
               f'font-family="sans-serif">timestep 0 to {T - 1}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_heatmap(h: AttentionHeatmap, fmt: str, path) -> None:
    if fmt == "csv":
        write_heatmap_csv(h, path)
    elif fmt == "svg":
        with _open(path) as fh:
            fh.write(render_svg(h))
    else:
        raise ValueError("format must be 'csv' or 'svg'")
