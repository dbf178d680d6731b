import numpy as np
import pytest
from _oracles import brute_shapley

from tputboost.dist_booster import NormalBoostRegressor
from tputboost.explain import (
    ensemble_shap,
    importance_report,
    subsample_rows,
    summarize_attributions,
    tree_shap,
)
from tputboost.point_booster import PointBoostRegressor
from tputboost.tree import TreeArrays, fit_tree


def random_tree(rng, max_features=4, max_depth=3):
    p = int(rng.integers(1, max_features + 1))
    n = int(rng.integers(5, 60))
    X = np.round(rng.normal(size=(n, p)) * 2)
    X[rng.random(X.shape) < 0.2] = np.nan
    tree = fit_tree(X, rng.normal(size=n), max_depth=int(rng.integers(0, max_depth + 1)))
    rows = np.round(rng.normal(size=(10, p)) * 2)
    rows[rng.random(rows.shape) < 0.2] = np.nan
    return tree, rows


def test_single_leaf_tree():
    tree = fit_tree(np.zeros((4, 2)), np.full(4, 2.5), max_depth=2)
    att = tree_shap(tree, np.array([1.0, -1.0]))
    assert np.all(att.values == 0) and att.base == 2.5


def test_depth_one_closed_form():
    X = np.array([[0.0, 7.0], [1.0, 7.0], [2.0, 7.0], [3.0, 7.0], [4.0, 7.0]])
    y = np.array([1.0, 1.0, 4.0, 4.0, 4.0])
    tree = fit_tree(X, y, max_depth=1)
    a, b, n_l, n_r = 1.0, 4.0, 2, 3
    att = tree_shap(tree, np.array([3.5, 7.0]))
    assert att.values[0] == pytest.approx(b - (n_l * a + n_r * b) / (n_l + n_r), abs=1e-12)
    assert att.values[1] == 0.0


def test_matches_brute_force():
    rng = np.random.default_rng(99)
    for _ in range(30):
        tree, rows = random_tree(rng)
        att = tree_shap(tree, rows)
        for r in range(rows.shape[0]):
            np.testing.assert_allclose(att.values[r], brute_shapley(tree, rows[r]), atol=1e-9, rtol=0)


def _hand_tree(first, second):
    # root splits `first` at 0; both children split `second`
    return TreeArrays.from_dict({
        "max_depth": 2,
        "feature": [first, second, second, -1, -1, -1, -1],
        "threshold": [0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        "default_left": [True] * 7,
        "left": [1, 3, 5, -1, -1, -1, -1],
        "right": [2, 4, 6, -1, -1, -1, -1],
        "value": [2.0, 1.0, 3.0, 0.0, 2.0, 1.0, 5.0],
        "cover": [40.0, 20.0, 20.0, 10.0, 10.0, 15.0, 5.0],
    })


def test_symmetry_of_duplicated_columns():
    # duplicated column pair used with swapped roles by two trees
    trees = [_hand_tree(0, 1), _hand_tree(1, 0)]
    rng = np.random.default_rng(4)
    a = rng.normal(size=50) * 2
    R = np.column_stack([a, a, rng.normal(size=50)])
    total = sum(tree_shap(t, R).values for t in trees)
    np.testing.assert_allclose(total[:, 0], total[:, 1], atol=1e-12)
    np.testing.assert_array_equal(total[:, 2], 0.0)


def test_symmetry_within_one_tree():
    # x0 and x1 play mirrored roles: y = 1{x0 > 0} + 1{x1 > 0}
    grid = np.array([[a, b] for a in (-1.0, 1.0) for b in (-1.0, 1.0)] * 10)
    y = (grid[:, 0] > 0).astype(float) + (grid[:, 1] > 0)
    tree = fit_tree(grid, y, max_depth=2)
    att = tree_shap(tree, np.array([[1.0, 1.0], [-1.0, -1.0]]))
    np.testing.assert_allclose(att.values[:, 0], att.values[:, 1], atol=1e-12)


def test_dummy_feature_gets_zero(small_models, small_synth):
    point, _ = small_models
    X = small_synth["test"].features[:200]
    used = set().union(*(t.used_features() for t in point.trees_[: point.best_iteration_]))
    att = ensemble_shap(point, X)
    for j in set(range(X.shape[1])) - used:
        assert np.all(att.values[:, j] == 0.0)


@pytest.mark.parametrize("head", ["mu", "log_sigma"])
def test_local_accuracy_dist(small_models, small_synth, head):
    _, dist = small_models
    X = small_synth["test"].features
    att = ensemble_shap(dist, X, head)
    np.testing.assert_allclose(att.output, dist.predict_head(X, head), atol=1e-9, rtol=0)


def test_local_accuracy_point(small_models, small_synth):
    point, _ = small_models
    X = small_synth["test"].features
    att = ensemble_shap(point, X)
    np.testing.assert_allclose(att.output, point.predict(X), atol=1e-9, rtol=0)


def test_zero_iterations(small_models, small_synth):
    _, dist = small_models
    att = ensemble_shap(dist, small_synth["test"].features[:10], "log_sigma", iteration=0)
    assert np.all(att.values == 0) and att.base == dist.init_.log_sigma


def test_one_tree_ensemble_scaling():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(300, 3))
    y = X[:, 0] + rng.normal(size=300) * (1 + np.abs(X[:, 1]))
    m = NormalBoostRegressor(max_iters=1, patience=5).fit(X, y, eval_set=(X, y))
    assert m.scalings_[0] == 1.0
    rows = rng.normal(size=(5, 3))
    for head, trees in (("mu", m.mu_trees_), ("log_sigma", m.logsigma_trees_)):
        att = ensemble_shap(m, rows, head, iteration=1)
        np.testing.assert_allclose(att.values, -0.05 * tree_shap(trees[0], rows).values, atol=1e-15)
    p = PointBoostRegressor(max_iters=1, patience=5).fit(X, y, eval_set=(X, y))
    np.testing.assert_allclose(
        ensemble_shap(p, rows, iteration=1).values, 0.05 * tree_shap(p.trees_[0], rows).values, atol=1e-15
    )


def test_single_informative_feature_report():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 4))
    y = 2 * X[:, 2]
    m = PointBoostRegressor(max_depth=3, max_iters=30).fit(X, y, eval_set=(X, y))
    rep = importance_report(m, X, ["a", "b", "c", "d"], ["radio", "e2e", "radio", "e2e"])["mu"]
    np.testing.assert_array_equal(rep.normalized, [0.0, 0.0, 1.0, 0.0])
    assert rep.e2e_radio_ratio == 0.0


def test_duplicated_category_ratio_is_one():
    rng = np.random.default_rng(6)
    n = 400
    a, b = rng.normal(size=n), rng.normal(size=n)
    # columns 0,1 radio and 2,3 e2e: each category holds an identical copy of (a, b)
    X = np.column_stack([a, b, a, b])
    values = ensemble_shap(
        PointBoostRegressor(max_depth=3, max_iters=40).fit(X[:, :2], a + b, eval_set=(X[:, :2], a + b)), X[:, :2]
    ).values
    rep = summarize_attributions(
        np.column_stack([values, values]), ["r1", "r2", "e1", "e2"], ["radio", "radio", "e2e", "e2e"]
    )
    assert abs(rep.e2e_radio_ratio - 1.0) <= 1e-12


def test_head_labels_and_shares(small_models, small_synth):
    _, dist = small_models
    reps = importance_report(dist, small_synth["test"])
    assert set(reps) == {"mu", "log_sigma"}
    assert reps["log_sigma"].label == "sigma (log-scale)"
    shares = reps["mu"].category_shares("e2e")
    assert sum(shares.values()) == pytest.approx(1.0)


def test_subsample_is_deterministic_stride():
    idx = subsample_rows(45_000, 20_000)
    assert idx[1] - idx[0] == 3 and len(idx) <= 20_000
    np.testing.assert_array_equal(subsample_rows(10, 20_000), np.arange(10))


def test_unknown_head(small_models, small_synth):
    point, _ = small_models
    with pytest.raises(ValueError):
        ensemble_shap(point, small_synth["test"].features[:3], "log_sigma")
