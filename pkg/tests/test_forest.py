import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exhaustive_root_split
from sklearn.base import clone

from simlearn.exceptions import EmptyNode, SingleClassDataset
from simlearn.forest import (GRID, ForestConfig, RandomForest, best_split, fit_forest, fit_tree,
                             grow_for_grid, impurity, load_forest, predict_proba, predict_tree,
                             save_forest, tree_depth)


@pytest.mark.parametrize("counts, crit, want", [
    ((5, 5), "gini", 0.5), ((10, 0), "gini", 0.0), ((3, 1), "gini", 0.375),
    ((5, 5), "entropy", 1.0), ((0, 4), "entropy", 0.0),
])
def test_impurity_examples(counts, crit, want):
    assert impurity(counts, crit) == pytest.approx(want, abs=1e-15)


def test_impurity_rejects_empty():
    with pytest.raises(EmptyNode):
        impurity((0, 0))


def test_one_dimensional_split():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    dec, j, thr = best_split(X, np.array([0, 0, 1, 1]), [0], "gini")
    assert (j, thr) == (0, 0.5) and dec == pytest.approx(0.5)


@settings(max_examples=60)
@given(st.integers(0, 2**31), st.sampled_from(["gini", "entropy"]), st.integers(4, 14))
def test_split_matches_exhaustive_scan(seed, crit, n):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, 3)).astype(float)
    y = rng.integers(0, 2, size=n)
    ours = best_split(X, y, [0, 1, 2], crit)
    ref = exhaustive_root_split(X, y, crit)
    if ref is None:
        assert ours is None
    else:
        assert ours[1:] == ref[1:] and ours[0] == pytest.approx(ref[0])


def test_tree_respects_constraints(rng):
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] + 0.3 * rng.normal(size=200) > 0).astype(int)
    tree = fit_tree(X, y, max_depth=3, min_samples_split=20, seed=1)
    assert tree_depth(tree) <= 3
    for node in tree.iter_nodes():
        if not node.is_leaf:
            assert node.n_samples >= 20


def test_pruned_reading_equals_refit(rng):
    X = rng.normal(size=(120, 4))
    y = (X[:, 1] > 0).astype(int) ^ (rng.random(120) < 0.1)
    deep = fit_tree(X, y, max_depth=9, min_samples_split=3, criterion="entropy", seed=2)
    shallow = fit_tree(X, y, max_depth=4, min_samples_split=8, criterion="entropy", seed=2)
    assert np.array_equal(predict_tree(deep, X, 4, 8), predict_tree(shallow, X))


def test_grid_reading_equals_direct_fits(rng):
    X = rng.normal(size=(90, 6))
    y = (X[:, 0] - X[:, 2] + 0.5 * rng.normal(size=90) > 0).astype(int)
    grown = grow_for_grid(X, y, "gini", seed=4)
    grid = grown.grid_proba(X, [3, 9], [5, 8], [3, 7, 11])
    for n in (3, 9):
        for d in (5, 8):
            for m in (3, 7, 11):
                direct = predict_proba(fit_forest(X, y, ForestConfig(n, "gini", d, m, seed=4)), X)
                assert np.array_equal(grid[(n, d, m)], direct)
                assert np.array_equal(grown.predict_proba(X, n, d, m), direct)


def test_forest_proba_is_tree_mean(rng):
    X = rng.normal(size=(50, 3))
    y = (X[:, 0] > 0).astype(int)
    trees = fit_forest(X, y, ForestConfig(n_trees=5, seed=1))
    mean = np.mean([predict_tree(t, X) for t in trees], axis=0)
    assert np.allclose(predict_proba(trees, X), mean)


def test_single_class_rejected():
    with pytest.raises(SingleClassDataset):
        fit_forest(np.zeros((5, 2)), np.ones(5, dtype=int), ForestConfig())


def test_estimator_fits_separable_data(rng):
    X = rng.normal(size=(100, 4))
    y = (X[:, 0] > 0).astype(int)
    est = RandomForest(random_state=0).fit(X, y)
    assert np.mean(est.predict(X) == y) >= 0.95
    again = clone(est).fit(X, y)
    assert np.array_equal(est.predict_proba(X), again.predict_proba(X))
    assert est.predict_proba(X).shape == (100, 2)
    assert np.array_equal(est.decision_function(X), est.predict_proba(X)[:, 1])


def test_save_load_round_trip(tmp_path, rng):
    X = rng.normal(size=(60, 3))
    y = (X[:, 2] > 0).astype(int)
    trees = fit_forest(X, y, ForestConfig(n_trees=4, seed=3))
    save_forest(trees, tmp_path / "f.npz", {"criterion": "gini"})
    back, header = load_forest(tmp_path / "f.npz")
    assert header["criterion"] == "gini"
    assert np.array_equal(predict_proba(trees, X), predict_proba(back, X))


def test_grid_size():
    assert np.prod([len(v) for v in GRID.values()]) == 350
