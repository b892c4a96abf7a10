import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import independent_span
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from simlearn.exceptions import EmptySequence
from simlearn.features import (ActionSpanEncoder, FeatureSet, StateActionEncoder, Truncator,
                               encode_action_span, encode_state_action, pad_sequences,
                               span_from_state_action, truncate)
from simlearn.schema import CategorizedSequence


def cat_seq(states, actions, durations, c_s=4, c_e=6):
    return CategorizedSequence("s", np.array(states), np.array(actions),
                               np.array(durations, dtype=float), c_s, c_e)


@st.composite
def categorized(draw, c_s=4, c_e=6, max_len=60):
    n = draw(st.integers(1, max_len))
    states = draw(st.lists(st.integers(0, c_s - 1), min_size=n, max_size=n))
    actions = draw(st.lists(st.integers(0, c_e - 1), min_size=n, max_size=n))
    durs = draw(st.lists(st.floats(0.001, 500.0), min_size=n, max_size=n))
    return cat_seq(states, actions, durs, c_s, c_e)


def test_single_event_row():
    M = encode_state_action(cat_seq([0], [2], [5.0])).matrix
    assert M.tolist() == [[1, 0, 0, 0, 0, 0, 1, 0, 0, 0]]


def test_two_event_proportions():
    M = encode_state_action(cat_seq([1, 1], [0, 3], [3.0, 7.0])).matrix
    assert M[0, 4] == pytest.approx(0.3) and M[1, 7] == pytest.approx(0.7)


def test_random_sequence_against_independent_accumulation(rng):
    s, a = rng.integers(0, 4, 50), rng.integers(0, 6, 50)
    d = rng.exponential(3.0, 50) + 0.01
    M = encode_state_action(cat_seq(s, a, d)).matrix
    assert np.allclose(M[:, :4].sum(axis=1), 1.0)
    assert abs(M[:, 4:].sum() - 1.0) < 1e-9
    total = sum(d)
    for m in range(50):
        assert M[m, 4 + a[m]] == pytest.approx(d[m] / total, rel=1e-12)


@given(categorized())
def test_encoding_invariants(seq):
    feat = encode_state_action(seq)
    M = feat.matrix
    state, action = M[:, :4], M[:, 4:]
    assert np.all((state == 0) | (state == 1)) and np.all(state.sum(axis=1) == 1)
    assert np.all((action > 0).sum(axis=1) == 1) and np.all(action >= 0)
    assert abs(action.sum() - 1.0) < 1e-9
    span = encode_action_span(seq).vector
    assert abs(span.sum() - 1.0) < 1e-9
    assert np.allclose(span, independent_span(seq.state_index, seq.action_index, seq.duration,
                                              4, 6), rtol=0, atol=1e-12)
    assert np.allclose(span_from_state_action(M, 4), span, rtol=0, atol=1e-12)


@given(categorized(c_s=4, c_e=5))
def test_capacitor_span_length(seq):
    assert encode_action_span(seq).vector.shape == (20,)
    assert encode_state_action(seq).matrix.shape[1] == 9


def test_beers_span_length_and_one_event():
    v = encode_action_span(cat_seq([2], [3], [4.0])).vector
    assert v.shape == (24,)
    assert v[2 * 6 + 3] == 1.0 and v.sum() == 1.0


def test_empty_sequence():
    with pytest.raises(EmptySequence):
        encode_state_action(cat_seq([], [], []))
    with pytest.raises(EmptySequence):
        encode_action_span(cat_seq([], [], []))


def long_feat(rng, n=100):
    return encode_state_action(cat_seq(rng.integers(0, 4, n), rng.integers(0, 6, n),
                                       rng.exponential(2.0, n) + 0.01))


def test_truncate_lengths(rng):
    feat = long_feat(rng)
    assert truncate(feat, 30).seq_len == 30
    short = long_feat(rng, 20)
    assert truncate(short, 30) is short


@pytest.mark.parametrize("norm_window", ["truncated", "full"])
def test_truncate_composition(rng, norm_window):
    feat = long_feat(rng)
    a = truncate(truncate(feat, 50, norm_window), 30, norm_window).matrix
    b = truncate(feat, 30, norm_window).matrix
    assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_truncate_full_keeps_rows(rng):
    feat = long_feat(rng)
    assert np.array_equal(truncate(feat, 40, "full").matrix, feat.matrix[:40])


def test_truncate_default_rescales_window(rng):
    feat = long_feat(rng)
    M = truncate(feat, 40).matrix
    assert np.array_equal(M[:, :4], feat.matrix[:40, :4])
    assert abs(M[:, 4:].sum() - 1.0) < 1e-12
    ratio = M[:, 4:][feat.matrix[:40, 4:] > 0] / feat.matrix[:40, 4:][feat.matrix[:40, 4:] > 0]
    assert np.allclose(ratio, ratio[0])


def test_truncate_rejects_bad_args(rng):
    with pytest.raises(ValueError):
        truncate(long_feat(rng), 0)
    with pytest.raises(ValueError):
        truncate(long_feat(rng), 5, "window")


def test_pad_sequences():
    X, lengths = pad_sequences([np.ones((2, 3)), np.ones((4, 3))])
    assert X.shape == (2, 4, 3) and lengths.tolist() == [2, 4]
    assert np.all(X[0, 2:] == 0)


def test_transformers_follow_estimator_api(rng):
    seqs = [cat_seq(rng.integers(0, 4, n), rng.integers(0, 6, n), rng.random(n) + 0.1)
            for n in (5, 12, 40)]
    mats = StateActionEncoder().fit_transform(seqs)
    pipe = make_pipeline(Truncator(horizon=10, c_s=4), ActionSpanEncoder(c_s=4))
    span = pipe.fit_transform(mats)
    assert span.shape == (3, 24)
    assert np.allclose(span.sum(axis=1), 1.0)
    t = Truncator(horizon=7, norm_window="full")
    assert clone(t).get_params() == {"horizon": 7, "c_s": 4, "norm_window": "full"}
    assert np.allclose(ActionSpanEncoder().transform(seqs), ActionSpanEncoder(c_s=4).transform(mats))
    with pytest.raises(ValueError):
        ActionSpanEncoder().transform(mats)


def test_feature_set_round_trip(small_cohort, tmp_path):
    _, _, fs = small_cohort
    path = tmp_path / "f.npz"
    fs.save(path)
    back = FeatureSet.load(path)
    assert back.student_ids == fs.student_ids and back.feature_names == fs.feature_names
    assert all(np.array_equal(a, b) for a, b in zip(back.matrices, fs.matrices))
    assert np.array_equal(back.labels, fs.labels) and back.meta == fs.meta
    sub = fs.subset([0, 2])
    assert sub.student_ids == [fs.student_ids[0], fs.student_ids[2]]
    assert np.array_equal(sub.span_matrix(), fs.span_matrix()[[0, 2]])
