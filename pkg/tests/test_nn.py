import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import fd_check
from sklearn.base import clone

from simlearn.exceptions import DivergedLoss, EmptySequence, ShapeMismatch, WrongVariant
from simlearn.nn import (GRUClassifier, GruParams, SAGRUClassifier, attention_forward,
                         estimator_for, from_model, gru_forward, init_model, load_checkpoint,
                         model_forward, save_checkpoint, train)
from simlearn.nn import model as model_mod
from simlearn.nn.layers import AttentionParams, gru_backward
from simlearn.nn.model import AdamState, clip_gradients, model_backward, predict_proba


def randomize(model, rng, scale=0.5):
    for arr in model.named_arrays().values():
        arr[...] = rng.normal(0.0, scale, arr.shape)
    return model


def test_zero_gru_stays_at_zero(rng):
    H, _ = gru_forward(GruParams.zeros(3, 4), rng.normal(size=(7, 3)))
    assert np.all(H == 0)


def test_hand_evaluated_single_step():
    p = GruParams.zeros(1, 1)
    p.W_h[0, 0] = 1.0
    H, _ = gru_forward(p, np.ones((1, 1)))
    # z = sigmoid(0) = 0.5, h~ = tanh(1), h = 0.5 * tanh(1)
    assert H[0, 0] == pytest.approx(0.3807970779778823, abs=1e-15)


def test_gru_recurrence_matches_loop_oracle(rng):
    d, c = 3, 5
    p = GruParams(*(rng.normal(size=(d, c)) for _ in range(3)),
                  *(rng.normal(size=(c, c)) for _ in range(3)), *(rng.normal(size=c) for _ in range(3)))
    X = rng.normal(size=(6, d))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    h = np.zeros(c)
    for x in X:
        z = sig(x @ p.W_z + h @ p.U_z + p.b_z)
        r = sig(x @ p.W_r + h @ p.U_r + p.b_r)
        ht = np.tanh(x @ p.W_h + (r * h) @ p.U_h + p.b_h)
        h = (1 - z) * h + z * ht
    H, _ = gru_forward(p, X)
    assert np.allclose(H[-1], h, atol=1e-12)


def test_gru_shape_errors(rng):
    with pytest.raises(ShapeMismatch):
        gru_forward(GruParams.zeros(3, 2), rng.normal(size=(4, 5)))
    with pytest.raises(ShapeMismatch):
        gru_forward(GruParams.zeros(3, 2), np.zeros((0, 3)))


def test_gru_backward_input_gradient(rng):
    p = GruParams(*(rng.normal(size=(2, 3)) for _ in range(3)),
                  *(rng.normal(size=(3, 3)) for _ in range(3)), *(np.zeros(3) for _ in range(3)))
    X = rng.normal(size=(4, 2))
    G = rng.normal(size=(4, 3))
    _, cache = gru_forward(p, X)
    _, dX = gru_backward(p, G, cache)
    eps = 1e-6
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += eps
        Xm[idx] -= eps
        num = (np.sum(gru_forward(p, Xp)[0] * G) - np.sum(gru_forward(p, Xm)[0] * G)) / (2 * eps)
        assert dX[idx] == pytest.approx(num, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("variant", ["gru", "sa_gru"])
def test_gradients_match_finite_differences(variant, rng):
    model = randomize(init_model(variant, 5, cells=3, seed=1), rng)
    model.dropout_rate = 0.25
    X = [rng.normal(size=(4, 5)), rng.normal(size=(2, 5)), rng.normal(size=(5, 5))]
    mask = (rng.random((3, 3)) < 0.75) / 0.75
    assert fd_check(model, X, np.array([1, 0, 1]), mask) < 1e-4


def test_identical_rows_give_uniform_attention(rng):
    att = AttentionParams(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=3))
    X = np.tile(rng.normal(size=4), (5, 1))
    C, alpha, _ = attention_forward(att, X)
    assert np.allclose(alpha, 0.2) and np.allclose(C, X)


def test_singleton_attention(rng):
    att = AttentionParams(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=3))
    X = rng.normal(size=(1, 4))
    C, alpha, _ = attention_forward(att, X)
    assert alpha.tolist() == [[1.0]] and np.allclose(C, X)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_attention_rows_are_distributions(T, f, seed):
    rng = np.random.default_rng(seed)
    att = AttentionParams(rng.normal(size=(f, 3)), rng.normal(size=(f, 3)), rng.normal(size=3))
    lengths = rng.integers(1, T + 1, size=3)
    X = rng.normal(size=(3, T, f))
    _, alpha, _ = attention_forward(att, X, lengths)
    assert np.all(alpha >= 0)
    assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-9)
    for b, n in enumerate(lengths):
        assert np.all(alpha[b, :, n:] == 0)


@pytest.mark.parametrize("variant", ["gru", "sa_gru"])
def test_padding_is_inert(variant, rng):
    model = randomize(init_model(variant, 4, cells=3, seed=2), rng)
    X = rng.normal(size=(2, 6, 4))
    lengths = np.array([3, 6])
    y = np.array([0, 1])
    p1, c1 = model_forward(model, X, lengths)
    g1 = model_backward(model, p1, y, c1).named_arrays()
    X2 = X.copy()
    X2[0, 3:] = rng.normal(size=(3, 4)) * 10
    p2, c2 = model_forward(model, X2, lengths)
    g2 = model_backward(model, p2, y, c2).named_arrays()
    assert np.array_equal(p1, p2)
    for k in g1:
        assert np.allclose(g1[k], g2[k], atol=1e-12), k


def test_model_output_contract(rng):
    zero = init_model("sa_gru", 4, cells=3)
    for arr in zero.named_arrays().values():
        arr[...] = 0
    p, _ = model_forward(zero, rng.normal(size=(5, 4)))
    assert p.tolist() == [[0.5, 0.5]]
    model = randomize(init_model("gru", 4, cells=3), rng)
    X = [rng.normal(size=(n, 4)) for n in (1, 3, 8)]
    a, _ = model_forward(model, X)
    b, _ = model_forward(model, X)
    assert np.array_equal(a, b)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(EmptySequence):
        model_forward(model, [np.zeros((0, 4))])
    with pytest.raises(ShapeMismatch):
        model_forward(model, rng.normal(size=(3, 5)))


def test_model_params_invariants():
    m = init_model("gru", 4, cells=3)
    with pytest.raises(ValueError):
        type(m)("sa_gru", m.gru, m.head_W, m.head_b, None)
    assert init_model("sa_gru", 4, cells=3).gru.input_dim == 8


def test_glorot_bounds_and_zero_biases():
    m = init_model("sa_gru", 10, cells=32, seed=4)
    assert m.attention.a == 10
    assert np.abs(m.gru.W_z).max() <= math.sqrt(6 / (20 + 32))
    assert np.abs(m.gru.U_h).max() <= math.sqrt(6 / 64)
    assert all(np.all(b == 0) for b in (m.gru.b_z, m.gru.b_r, m.gru.b_h, m.head_b))


def test_dropout_preserves_expectation():
    keep = 0.98
    rng = np.random.default_rng(0)
    masks = (rng.random((100_000, 8)) < keep) / keep
    h = np.linspace(0.1, 0.8, 8)
    assert np.allclose((masks * h).mean(axis=0), h, rtol=0.01)


def test_adam_first_step_is_signed_lr():
    m = init_model("gru", 2, cells=2)
    before = m.copy()
    grads = m.copy()
    for arr in grads.named_arrays().values():
        arr[...] = 3.0
    AdamState(lr=0.01).update(m, grads)
    for k, arr in m.named_arrays().items():
        assert np.allclose(before.named_arrays()[k] - arr, 0.01, rtol=1e-6)


def test_clip_gradients():
    g = init_model("gru", 2, cells=2)
    for arr in g.named_arrays().values():
        arr[...] = 10.0
    clip_gradients(g, 5.0)
    assert math.sqrt(sum(float((a * a).sum()) for a in g.named_arrays().values())) == pytest.approx(5.0)


def separable(rng, n=20, f=6):
    y = np.arange(n) % 2
    X = []
    for label in y:
        M = np.zeros((rng.integers(3, 8), f))
        M[:, 0 if label else 1] = 1.0
        M[:, 2:] = rng.random((len(M), f - 2)) * 0.1
        X.append(M)
    return X, y


@pytest.mark.parametrize("variant", ["gru", "sa_gru"])
def test_training_reduces_loss_and_is_deterministic(variant, rng):
    X, y = separable(rng)
    runs = []
    for _ in range(2):
        m, losses = train(init_model(variant, 6, cells=8, seed=3), X, y, epochs=30,
                          rng=np.random.default_rng(5))
        runs.append((m, losses))
    assert runs[0][1][-1] < runs[0][1][0]
    for k, arr in runs[0][0].named_arrays().items():
        assert np.array_equal(arr, runs[1][0].named_arrays()[k])


def test_zero_epochs_is_noop(rng):
    X, y = separable(rng)
    m = init_model("gru", 6, cells=4)
    before = m.copy()
    train(m, X, y, epochs=0)
    assert all(np.array_equal(a, before.named_arrays()[k]) for k, a in m.named_arrays().items())


def test_diverged_loss(rng, monkeypatch):
    X, y = separable(rng)
    monkeypatch.setattr(model_mod, "cross_entropy", lambda p, y: float("nan"))
    with pytest.raises(DivergedLoss):
        train(init_model("gru", 6, cells=4), X, y, epochs=1)


def test_checkpoint_round_trip(tmp_path, rng):
    m = randomize(init_model("sa_gru", 5, cells=3, seed=9), rng)
    save_checkpoint(m, tmp_path / "m.npz", {"note": "x"})
    back, header = load_checkpoint(tmp_path / "m.npz")
    assert header["variant"] == "sa_gru" and header["extra"] == {"note": "x"}
    for k, arr in m.named_arrays().items():
        assert np.array_equal(arr, back.named_arrays()[k])
    X = [rng.normal(size=(4, 5))]
    assert np.array_equal(predict_proba(m, X), predict_proba(back, X))


def test_estimators(rng):
    X, y = separable(rng)
    est = SAGRUClassifier(cells=4, epochs=3, random_state=1)
    assert clone(est).get_params()["attention_size"] is None
    est.fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (20, 2) and set(est.predict(X)) <= {0, 1}
    assert np.array_equal(est.decision_function(X), proba[:, 1])
    ctx = est.attention_output(X[:2])
    assert [c.shape for c in ctx] == [x.shape for x in X[:2]]
    assert [w.shape for w in est.attention_weights(X[:2])] == [(len(x), len(x)) for x in X[:2]]
    again = SAGRUClassifier(cells=4, epochs=3, random_state=1).fit(X, y)
    assert np.array_equal(again.predict_proba(X), proba)
    wrapped = from_model(est.model_)
    assert np.array_equal(wrapped.predict_proba(X), proba)
    assert isinstance(estimator_for("gru"), GRUClassifier)
    with pytest.raises(WrongVariant):
        estimator_for("lstm")
    with pytest.raises(ShapeMismatch):
        est.predict_proba([np.zeros((3, 7))])
