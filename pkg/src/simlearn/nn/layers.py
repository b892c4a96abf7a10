"""Batched GRU and additive self-attention with hand-written backward passes.

Shapes: ``B`` batch, ``T`` padded length, ``d`` input width, ``c`` GRU cells,
``a`` attention hidden size. Padding sits at the end of each sequence;
``lengths`` holds the real lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeMismatch


def sigmoid(x):
    # tanh form is overflow-free without branching on sign
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def cells(self) -> int:
        return self.U_z.shape[0]

    def check(self):
        d, c = self.input_dim, self.cells
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (d, c):
                raise ShapeMismatch(f"{name} must be {(d, c)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (c, c):
                raise ShapeMismatch(f"{name} must be {(c, c)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (c,):
                raise ShapeMismatch(f"{name} must be {(c,)}")

    @classmethod
    def zeros(cls, input_dim, cells):
        W = lambda: np.zeros((input_dim, cells))  # noqa: E731
        U = lambda: np.zeros((cells, cells))  # noqa: E731
        b = lambda: np.zeros(cells)  # noqa: E731
        return cls(W(), W(), W(), U(), U(), U(), b(), b(), b())


@dataclass
class AttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    v: np.ndarray

    NAMES = ("W_q", "W_k", "v")

    @property
    def a(self) -> int:
        return self.v.shape[0]

    def check(self, f=None):
        if self.W_q.shape != self.W_k.shape or self.W_q.shape[1] != self.a:
            raise ShapeMismatch("W_q and W_k must both be (f, a) with a = len(v)")
        if f is not None and self.W_q.shape[0] != f:
            raise ShapeMismatch(f"attention expects {self.W_q.shape[0]} features, got {f}")

    @classmethod
    def zeros(cls, f, a):
        return cls(np.zeros((f, a)), np.zeros((f, a)), np.zeros(a))


def _as_batch(inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (T, d) or (B, T, d) input, got shape {x.shape}")
    return x, False


def gru_forward(params: GruParams, inputs, h0=None):
    """Run the GRU over every timestep.

    ``inputs`` is ``(T, d)`` or ``(B, T, d)``. Returns the hidden states with the
    same leading layout and a cache for :func:`gru_backward`.
    """
    X, single = _as_batch(inputs)
    B, T, d = X.shape
    if T < 1:
        raise ShapeMismatch("sequence must have at least one step")
    if d != params.input_dim:
        raise ShapeMismatch(f"GRU expects input width {params.input_dim}, got {d}")
    c = params.cells
    W = np.concatenate([params.W_z, params.W_r, params.W_h], axis=1)
    U_zr = np.concatenate([params.U_z, params.U_r], axis=1)
    b = np.concatenate([params.b_z, params.b_r, params.b_h])
    XW = X @ W + b  # (B, T, 3c)

    H = np.empty((B, T + 1, c))
    H[:, 0] = 0.0 if h0 is None else h0
    Z = np.empty((B, T, c))
    R = np.empty((B, T, c))
    Ht = np.empty((B, T, c))
    for t in range(T):
        h = H[:, t]
        a_zr = XW[:, t, : 2 * c] + h @ U_zr
        zr = sigmoid(a_zr)
        z, r = zr[:, :c], zr[:, c:]
        ht = np.tanh(XW[:, t, 2 * c:] + (r * h) @ params.U_h)
        H[:, t + 1] = h + z * (ht - h)
        Z[:, t], R[:, t], Ht[:, t] = z, r, ht
    cache = (X, H, Z, R, Ht, U_zr)
    out = H[:, 1:]
    return (out[0] if single else out), cache


def gru_backward(params: GruParams, dH_out, cache):
    """Backpropagation through time.

    ``dH_out`` is the loss gradient w.r.t. every output hidden state, shaped like
    the forward output. Returns ``(grads, dX)`` with ``grads`` a ``GruParams``.
    """
    X, H, Z, R, Ht, U_zr = cache
    dH_out, single = _as_batch(dH_out)
    B, T, _ = X.shape
    c = params.cells
    U_zr_T = U_zr.T
    U_h_T = params.U_h.T
    DA = np.empty((B, T, 3 * c))  # pre-activation grads for z, r, h~
    RH = R * H[:, :-1]
    dh = np.zeros((B, c))
    for t in range(T - 1, -1, -1):
        dh = dh + dH_out[:, t]
        h_prev = H[:, t]
        z, r, ht = Z[:, t], R[:, t], Ht[:, t]
        da_h = dh * z * (1.0 - ht * ht)
        da_z = dh * (ht - h_prev) * z * (1.0 - z)
        d_rh = da_h @ U_h_T
        da_r = d_rh * h_prev * r * (1.0 - r)
        DA[:, t, :c] = da_z
        DA[:, t, c: 2 * c] = da_r
        DA[:, t, 2 * c:] = da_h
        dh = dh * (1.0 - z) + d_rh * r + DA[:, t, : 2 * c] @ U_zr_T
    DA2 = DA.reshape(B * T, 3 * c)
    dW = X.reshape(B * T, -1).T @ DA2
    Hp = H[:, :-1].reshape(B * T, c)
    dU_zr = Hp.T @ DA2[:, : 2 * c]
    dU_h = RH.reshape(B * T, c).T @ DA2[:, 2 * c:]
    db = DA2.sum(axis=0)
    W = np.concatenate([params.W_z, params.W_r, params.W_h], axis=1)
    dX = DA @ W.T
    grads = GruParams(
        dW[:, :c], dW[:, c: 2 * c], dW[:, 2 * c:],
        dU_zr[:, :c], dU_zr[:, c:], dU_h,
        db[:c], db[c: 2 * c], db[2 * c:],
    )
    return grads, (dX[0] if single else dX)


def attention_forward(params: AttentionParams, X, lengths=None):
    """Additive self-attention with the raw features as query, key and value.

    ``score(t, j) = v . tanh(W_q^T x_t + W_k^T x_j)``, softmax over real keys
    ``j < length``. Returns ``(contexts, weights, cache)``.
    """
    Xb, single = _as_batch(X)
    B, T, f = Xb.shape
    if T < 1:
        raise ShapeMismatch("sequence must have at least one step")
    params.check(f)
    if lengths is None:
        lengths = np.full(B, T)
    lengths = np.asarray(lengths)
    Qt = (Xb @ params.W_q).transpose(0, 2, 1)
    Kt = (Xb @ params.W_k).transpose(0, 2, 1)
    a = params.a
    # (B, a, T, T) keeps the long axis innermost
    E = np.add(Qt[:, :, :, None], Kt[:, :, None, :])
    np.tanh(E, out=E)
    S = (params.v @ E.reshape(B, a, T * T)).reshape(B, T, T)
    key_mask = np.arange(T)[None, :] < lengths[:, None]  # (B, T)
    S = np.where(key_mask[:, None, :], S, -np.inf)
    alpha = softmax(S, axis=-1)
    C = alpha @ Xb
    cache = (Xb, E, alpha)
    if single:
        return C[0], alpha[0], cache
    return C, alpha, cache


def attention_backward(params: AttentionParams, dC, cache):
    """Parameter gradients of the attention layer given ``dL/dcontexts``.

    Consumes ``cache``: the stored tanh activations are overwritten.
    """
    X, E, alpha = cache
    dC, _ = _as_batch(dC)
    B, T, f = X.shape
    a = params.a
    dalpha = dC @ X.transpose(0, 2, 1)
    dS = alpha * (dalpha - np.sum(dalpha * alpha, axis=-1, keepdims=True))
    dv = (E.reshape(B, a, T * T) @ dS.reshape(B, T * T, 1)).sum(axis=0)[:, 0]
    # d pre-activation = dS * v * (1 - E^2); reduce over keys / queries without
    # materializing it: sum_j dS (1 - E^2) = sum_j dS - sum_j dS E^2
    E2 = np.multiply(E, E, out=E)
    dQ = dS.sum(axis=2)[..., None] - np.einsum("batj,btj->bta", E2, dS, optimize=True)
    dK = dS.sum(axis=1)[..., None] - np.einsum("batj,btj->bja", E2, dS, optimize=True)
    dQ *= params.v
    dK *= params.v
    Xf = X.reshape(-1, f)
    dW_q = Xf.T @ dQ.reshape(-1, a)
    dW_k = Xf.T @ dK.reshape(-1, a)
    return AttentionParams(dW_q, dW_k, dv)
