import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tputboost.exceptions import ModelIntegrityError
from tputboost.tree import PackedTrees, RegressionTree, TreeArrays, fit_tree, predict_packed, predict_tree

X4 = np.array([[0.0], [1.0], [2.0], [3.0]])
Y4 = np.array([0.0, 0.0, 10.0, 10.0])


def check_covers(tree):
    for i in range(tree.n_nodes):
        if tree.left[i] != -1:
            assert tree.cover[i] == tree.cover[tree.left[i]] + tree.cover[tree.right[i]]


def test_constant_target_gives_single_leaf():
    X = np.random.default_rng(0).normal(size=(30, 3))
    tree = fit_tree(X, np.full(30, 4.5), max_depth=3)
    assert tree.n_nodes == 1
    assert tree.value[0] == 4.5 and tree.cover[0] == 30


def test_four_row_split_by_hand():
    tree = fit_tree(X4, Y4, max_depth=1)
    assert 1.0 < tree.threshold[0] <= 2.0
    assert tree.value[tree.left[0]] == 0.0
    assert tree.value[tree.right[0]] == 10.0
    assert predict_tree(tree, np.array([[3.0]]))[0] == 10.0


def test_depth_zero_is_mean():
    y = np.array([1.0, 2.0, 6.0])
    tree = fit_tree(np.zeros((3, 2)), y, max_depth=0)
    assert tree.n_nodes == 1 and tree.value[0] == pytest.approx(3.0)
    assert np.all(predict_tree(tree, np.random.default_rng(1).normal(size=(5, 2))) == tree.value[0])


def test_missing_root_feature_follows_default():
    X = np.array([[0.0], [1.0], [np.nan], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
    tree = fit_tree(X, y, max_depth=1)
    assert tree.default_left[0]
    assert predict_tree(tree, np.array([[np.nan]]))[0] == tree.value[tree.left[0]]


def test_missing_goes_to_better_side():
    X = np.array([[0.0], [1.0], [np.nan], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0, 10.0])
    tree = fit_tree(X, y, max_depth=1)
    assert not tree.default_left[0]
    assert predict_tree(tree, np.array([[np.nan]]))[0] == 10.0


def test_min_samples_leaf():
    tree = fit_tree(X4, np.array([0.0, 10.0, 10.0, 10.0]), max_depth=1, min_samples_leaf=2)
    assert tree.cover[tree.left[0]] >= 2 and tree.cover[tree.right[0]] >= 2


def test_ties_prefer_lowest_feature():
    X = np.column_stack([X4[:, 0], X4[:, 0]])
    tree = fit_tree(X, Y4, max_depth=1)
    assert tree.feature[0] == 0


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 4)),
           elements=st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 3.0, np.nan])),
    st.integers(0, 4),
    st.randoms(use_true_random=False),
)
def test_structural_invariants(X, depth, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    y = rng.normal(size=X.shape[0])
    tree = fit_tree(X, y, max_depth=depth)
    tree.validate()
    assert tree.cover[0] == X.shape[0]
    check_covers(tree)
    assert tree.depth() <= depth
    # every split strictly reduces training SSE
    leaf_pred = predict_tree(tree, X)
    assert np.sum((y - leaf_pred) ** 2) <= np.sum((y - y.mean()) ** 2) + 1e-9
    # permutation invariance
    perm = rng.permutation(X.shape[0])
    other = fit_tree(X[perm], y[perm], max_depth=depth)
    np.testing.assert_array_equal(other.feature, tree.feature)
    np.testing.assert_array_equal(other.threshold, tree.threshold)
    np.testing.assert_allclose(other.value, tree.value, rtol=0, atol=1e-12)


def test_split_gain_is_positive_at_every_node():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    y = X[:, 0] + rng.normal(size=200) * 0.1
    tree = fit_tree(X, y, max_depth=4)
    rows = np.arange(200)

    def sse(idx):
        return np.sum((y[idx] - y[idx].mean()) ** 2)

    def walk(node, idx):
        if tree.left[node] == -1:
            return
        go_left = X[idx, tree.feature[node]] < tree.threshold[node]
        li, ri = idx[go_left], idx[~go_left]
        assert sse(li) + sse(ri) < sse(idx)
        walk(tree.left[node], li)
        walk(tree.right[node], ri)

    walk(0, rows)


def test_validate_names_bad_field():
    tree = fit_tree(X4, Y4, max_depth=1)
    d = tree.to_dict()
    d["left"] = [5, -1, -1]
    with pytest.raises(ModelIntegrityError) as exc:
        TreeArrays.from_dict(d)
    assert exc.value.field == "left"


def test_dict_round_trip():
    tree = fit_tree(X4, Y4, max_depth=1)
    again = TreeArrays.from_dict(tree.to_dict())
    np.testing.assert_array_equal(again.threshold, tree.threshold)
    np.testing.assert_array_equal(again.value, tree.value)


def test_packed_matches_per_tree_sum():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 3))
    trees = [fit_tree(X, rng.normal(size=100), max_depth=2) for _ in range(5)]
    w = rng.normal(size=5)
    packed = PackedTrees.from_trees(trees)
    expected = 0.7 + sum(w[t] * predict_tree(trees[t], X) for t in range(5))
    np.testing.assert_allclose(predict_packed(packed, X, w, 0.7, 5), expected, atol=1e-12)
    np.testing.assert_array_equal(predict_packed(packed, X, w, 0.7, 0), np.full(100, 0.7))


def test_estimator_api():
    reg = RegressionTree(max_depth=1).fit(X4, Y4)
    assert reg.get_params() == {"max_depth": 1, "min_samples_leaf": 1}
    np.testing.assert_array_equal(reg.predict(X4), Y4)
