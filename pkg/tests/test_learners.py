import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from boostlss.design import DesignBlock, ridge_block
from boostlss.learners import PenalizedLearner, Tree, TreeConfig, TreeLearner, fit_penalized, fit_tree

from oracles import exhaustive_stump, normal_equations


def test_intercept_fit_is_mean():
    u = np.array([0.1, 0.3, 0.5, 0.7])
    f = fit_penalized(DesignBlock("1", np.ones((4, 1)), np.zeros((1, 1))), u)
    assert f.coef[0] == pytest.approx(0.4)
    np.testing.assert_allclose(f.fitted, 0.4)


def test_heavy_ridge_shrinks_to_zero():
    rng = np.random.default_rng(0)
    b = ridge_block(rng.integers(0, 4, 100), 4, df_target=None)
    b.lam = 1e12
    u = rng.normal(size=100)
    f = fit_penalized(b, u)
    assert np.max(np.abs(f.coef)) < 1e-8
    assert f.rss == pytest.approx(float(u @ u), rel=1e-8)


def test_small_system_matches_explicit_inverse():
    B = np.array([[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 0.0], [1.0, 1.5]])
    P = np.array([[0.0, 0.0], [0.0, 1.0]])
    u = np.array([1.0, -2.0, 3.0, 0.5, 2.0])
    f = fit_penalized(DesignBlock("toy", B, P, lam=0.7), u)
    np.testing.assert_allclose(f.coef, normal_equations(B, P, 0.7, u), rtol=1e-12)
    np.testing.assert_array_equal(f.predict(B), B @ f.coef)


def test_singular_system_uses_jitter():
    B = np.column_stack([np.ones(6), np.ones(6)])
    f = fit_penalized(DesignBlock("dup", B, np.zeros((2, 2))), np.arange(6.0))
    np.testing.assert_allclose(f.fitted, 2.5, atol=1e-6)


@given(alpha=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_penalized_fit_is_linear_in_u(alpha, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(20, 3))
    lrn = PenalizedLearner(DesignBlock("b", B, np.eye(3), lam=0.5))
    u1, u2 = rng.normal(size=20), rng.normal(size=20)
    np.testing.assert_allclose(lrn.fit(alpha * u1 + u2).coef, alpha * lrn.fit(u1).coef + lrn.fit(u2).coef,
                               atol=1e-10)


@given(hnp.arrays(float, 30, elements=st.floats(-10, 10)))
def test_rss_never_worse_than_zero_prediction(u):
    rng = np.random.default_rng(1)
    B = np.column_stack([np.ones(30), rng.normal(size=30)])
    f = fit_penalized(DesignBlock("b", B, np.eye(2), lam=1.0), u)
    assert 0 <= f.rss <= float(u @ u) + 1e-9


# -- trees ------------------------------------------------------------------------------


def test_constant_gradient_gives_root_only_tree():
    X = np.arange(400.0)[:, None]
    f = fit_tree(TreeConfig(), X, np.full(400, 2.5))
    assert f.tree.n_leaves == 1
    np.testing.assert_allclose(f.fitted, 2.5)
    assert f.rss == 0.0


def test_split_position_on_toy_data():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    u = np.array([0.0, 0.0, 10.0, 10.0])
    f = fit_tree(TreeConfig(max_depth=1, min_split=2, min_leaf=1), X, u)
    assert f.tree.feature[0] == 0 and f.tree.threshold[0] == 2.5
    assert exhaustive_stump(X, u, 1)[:2] == (0, 2.5)


def test_min_leaf_equal_n_blocks_splits():
    X = np.arange(300.0)[:, None]
    f = fit_tree(TreeConfig(min_leaf=300, min_split=2), X, X[:, 0])
    assert f.tree.n_leaves == 1


def test_stump_matches_exhaustive_enumeration():
    rng = np.random.default_rng(2)
    X = np.round(rng.normal(size=(120, 3)), 1)
    u = np.where(X[:, 1] > 0.3, 2.0, -1.0) + rng.normal(0, 0.5, 120)
    cfg = TreeConfig(max_depth=1, min_split=2, min_leaf=10, mtry=3)
    f = fit_tree(cfg, X, u)
    j, thr, sse = exhaustive_stump(X, u, 10)
    assert (f.tree.feature[0], f.tree.threshold[0]) == (j, thr)
    assert f.rss == pytest.approx(sse, rel=1e-10)


def test_tie_break_prefers_lowest_feature():
    X = np.column_stack([np.arange(10.0), np.arange(10.0)])
    u = np.r_[np.zeros(5), np.ones(5)]
    f = fit_tree(TreeConfig(max_depth=1, min_split=2, min_leaf=1), X, u)
    assert f.tree.feature[0] == 0


def test_depth_and_leaf_sizes_respected():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(2000, 4))
    u = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.1, 2000)
    cfg = TreeConfig(max_depth=3, min_split=200, min_leaf=50, mtry=4)
    f = fit_tree(cfg, X, u)
    assert f.tree.depth() <= 3
    leaf_of = {}
    for i, row in enumerate(X):
        node = 0
        while f.tree.feature[node] >= 0:
            node = f.tree.left[node] if row[f.tree.feature[node]] <= f.tree.threshold[node] else f.tree.right[node]
        leaf_of.setdefault(node, []).append(i)
    assert min(len(v) for v in leaf_of.values()) >= 50
    # leaf values are leaf means
    for node, rows in leaf_of.items():
        assert f.tree.value[node] == pytest.approx(u[rows].mean())
    assert f.rss <= float(np.sum((u - u.mean()) ** 2))


def test_mtry_sampling_is_seeded():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 8))
    u = X @ rng.normal(size=8)
    lrn = TreeLearner(X, TreeConfig(mtry=2))
    a = lrn.fit(u, np.random.default_rng([1, 2, 3]))
    b = lrn.fit(u, np.random.default_rng([1, 2, 3]))
    assert a.tree.to_dict() == b.tree.to_dict()


def test_tree_dict_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(600, 2))
    f = fit_tree(TreeConfig(), X, X[:, 0] * 2)
    t = Tree.from_dict(f.tree.to_dict())
    np.testing.assert_array_equal(t.predict(X), f.fitted)


def test_tree_config_validation():
    with pytest.raises(ValueError):
        TreeConfig(max_depth=0)
    with pytest.raises(ValueError):
        TreeConfig(mtry=0)
