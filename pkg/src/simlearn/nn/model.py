"""GRU and self-attention GRU classifiers: parameters, forward/backward, Adam training."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..exceptions import DivergedLoss, EmptySequence, ShapeMismatch
from ..features import pad_sequences
from .layers import (
    AttentionParams,
    GruParams,
    attention_backward,
    attention_forward,
    gru_backward,
    gru_forward,
    softmax,
)

VARIANTS = ("gru", "sa_gru")


@dataclass
class ModelParams:
    variant: str
    gru: GruParams
    head_W: np.ndarray
    head_b: np.ndarray
    attention: AttentionParams | None = None
    dropout_rate: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if (self.variant == "gru") != (self.attention is None):
            raise ValueError("attention parameters are present exactly for the sa_gru variant")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        self.gru.check()
        expected = self.f * (2 if self.variant == "sa_gru" else 1)
        if self.gru.input_dim != expected:
            raise ShapeMismatch(f"GRU input width must be {expected}, got {self.gru.input_dim}")
        if self.head_W.shape != (self.gru.cells, 2) or self.head_b.shape != (2,):
            raise ShapeMismatch("head must be (cells, 2) weights and a 2-vector bias")

    @property
    def f(self) -> int:
        if self.attention is not None:
            return self.attention.W_q.shape[0]
        return self.gru.input_dim

    @property
    def cells(self) -> int:
        return self.gru.cells

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, n) for n in GruParams.NAMES}
        if self.attention is not None:
            out.update({f"attention.{n}": getattr(self.attention, n) for n in AttentionParams.NAMES})
        out["head_W"] = self.head_W
        out["head_b"] = self.head_b
        return out

    def copy(self) -> "ModelParams":
        att = None
        if self.attention is not None:
            att = AttentionParams(*(getattr(self.attention, n).copy() for n in AttentionParams.NAMES))
        gru = GruParams(*(getattr(self.gru, n).copy() for n in GruParams.NAMES))
        return ModelParams(self.variant, gru, self.head_W.copy(), self.head_b.copy(), att,
                           self.dropout_rate, self.rng_seed)


def _glorot(rng, fan_in, fan_out, shape):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(variant: str, f: int, cells: int = 32, attention_size: int | None = None,
               dropout_rate: float = 0.02, seed: int = 0) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    att = None
    d = f
    if variant == "sa_gru":
        a = f if attention_size is None else attention_size
        att = AttentionParams(_glorot(rng, f, a, (f, a)), _glorot(rng, f, a, (f, a)),
                              _glorot(rng, a, 1, (a,)))
        d = 2 * f
    W = [_glorot(rng, d, cells, (d, cells)) for _ in range(3)]
    U = [_glorot(rng, cells, cells, (cells, cells)) for _ in range(3)]
    gru = GruParams(*W, *U, np.zeros(cells), np.zeros(cells), np.zeros(cells))
    head_W = _glorot(rng, cells, 2, (cells, 2))
    return ModelParams(variant, gru, head_W, np.zeros(2), att, dropout_rate, seed)


def _batch(X, lengths=None):
    if isinstance(X, np.ndarray) and X.ndim == 3:
        if lengths is None:
            lengths = np.full(X.shape[0], X.shape[1])
        return X, np.asarray(lengths)
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0 or any(len(x) == 0 for x in X):
        raise EmptySequence("every sequence needs at least one timestep")
    return pad_sequences(X)


def model_forward(model: ModelParams, X, lengths=None, train_mode: bool = False, rng=None,
                  dropout_mask=None):
    """Class probabilities for a batch.

    ``X`` is one ``(T, f)`` matrix, a list of them, or a padded ``(B, T, f)``
    array with ``lengths``. Dropout on the last real hidden state is active only
    in ``train_mode`` (drawn from ``rng`` unless ``dropout_mask`` is given).
    Returns ``(probs (B, 2), cache)``.
    """
    Xb, lengths = _batch(X, lengths)
    B, T, f = Xb.shape
    if f != model.f:
        raise ShapeMismatch(f"model expects {model.f} features, got {f}")
    att_cache = None
    if model.variant == "sa_gru":
        C, alpha, att_cache = attention_forward(model.attention, Xb, lengths)
        G = np.concatenate([C, Xb], axis=2)
    else:
        G = Xb
    H, gru_cache = gru_forward(model.gru, G)
    rows = np.arange(B)
    h_last = H[rows, lengths - 1]
    if train_mode and model.dropout_rate > 0:
        if dropout_mask is None:
            keep = 1.0 - model.dropout_rate
            dropout_mask = (rng.random(h_last.shape) < keep) / keep
        h_drop = h_last * dropout_mask
    else:
        dropout_mask = None
        h_drop = h_last
    probs = softmax(h_drop @ model.head_W + model.head_b)
    cache = (Xb, lengths, att_cache, gru_cache, H.shape, h_drop, dropout_mask)
    return probs, cache


def cross_entropy(probs, y) -> float:
    p = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def model_backward(model: ModelParams, probs, y, cache) -> ModelParams:
    """Gradients of mean cross-entropy, returned in a ``ModelParams`` shell."""
    Xb, lengths, att_cache, gru_cache, H_shape, h_drop, mask = cache
    B = len(y)
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    d_head_W = h_drop.T @ dlogits
    d_head_b = dlogits.sum(axis=0)
    dh = dlogits @ model.head_W.T
    if mask is not None:
        dh = dh * mask
    dH = np.zeros(H_shape)
    dH[np.arange(B), lengths - 1] = dh
    g_gru, dG = gru_backward(model.gru, dH, gru_cache)
    g_att = None
    if model.variant == "sa_gru":
        f = model.f
        g_att = attention_backward(model.attention, dG[:, :, :f], att_cache)
    return ModelParams(model.variant, g_gru, d_head_W, d_head_b, g_att, model.dropout_rate,
                       model.rng_seed)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: ModelParams, grads: ModelParams):
        self.step += 1
        b1t = 1.0 - self.beta1 ** self.step
        b2t = 1.0 - self.beta2 ** self.step
        targets = params.named_arrays()
        for name, g in grads.named_arrays().items():
            p = targets[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_gradients(grads: ModelParams, max_norm: float) -> float:
    arrays = list(grads.named_arrays().values())
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in arrays))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in arrays:
            g *= scale
    return norm


def train(model: ModelParams, X: Sequence[np.ndarray], y, epochs: int = 30, lr: float = 1e-3,
          batch_size: int = 16, clip_norm: float | None = 5.0, rng=None):
    """Minimize cross-entropy with Adam; updates ``model`` in place.

    Batches are drawn from a fresh permutation each epoch. Returns the model and
    the per-epoch mean training loss.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(y):
        raise ShapeMismatch("X and y differ in length")
    if rng is None:
        rng = np.random.default_rng(model.rng_seed)
    opt = AdamState(lr=lr)
    n = len(X)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            Xb, lengths = pad_sequences([X[i] for i in idx])
            probs, cache = model_forward(model, Xb, lengths, train_mode=True, rng=rng)
            loss = cross_entropy(probs, y[idx])
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            grads = model_backward(model, probs, y[idx], cache)
            if clip_norm:
                clip_gradients(grads, clip_norm)
            opt.update(model, grads)
        losses.append(total / n)
    return model, losses


def predict_proba(model: ModelParams, X: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(X), batch_size):
        probs, _ = model_forward(model, list(X[start: start + batch_size]))
        out.append(probs)
    return np.vstack(out)


def save_checkpoint(model: ModelParams, path, extra: dict | None = None) -> None:
    arrays = model.named_arrays()
    header = {
        "kind": "neural",
        "variant": model.variant,
        "dropout_rate": model.dropout_rate,
        "rng_seed": model.rng_seed,
        "f": model.f,
        "cells": model.cells,
        "attention_size": model.attention.a if model.attention is not None else None,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "extra": extra or {},
    }
    payload = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **payload)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("kind") != "neural":
            raise ValueError(f"{path} is not a neural checkpoint")
        arr = {k: z[k].astype(np.float64) for k in z.files if k != "header"}
    gru = GruParams(*(arr[f"gru.{n}"] for n in GruParams.NAMES))
    att = None
    if header["variant"] == "sa_gru":
        att = AttentionParams(*(arr[f"attention.{n}"] for n in AttentionParams.NAMES))
    model = ModelParams(header["variant"], gru, arr["head_W"], arr["head_b"], att,
                        header["dropout_rate"], header["rng_seed"])
    return model, header
