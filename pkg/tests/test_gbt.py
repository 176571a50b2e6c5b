import numpy as np
import pytest

from qoestack.dataset import Dataset, schema_from_names
from qoestack.learners.gbt import DecisionTree, GbtModel, fit_gbt, gbt_build_tree

from .conftest import table_from_arrays


def brute_force_best_split(x: np.ndarray, residuals: np.ndarray):
    """Exhaustive split search minimizing SSE with mean leaf values.

    Returns (threshold, sse_reduction) over midpoints of consecutive distinct
    sorted values; independent of the tree builder.
    """
    order = np.argsort(x, kind="stable")
    xs, rs = x[order], residuals[order]
    n = xs.shape[0]
    parent = float(((rs - rs.mean()) ** 2).sum())
    best = None
    for k in range(1, n):
        if xs[k - 1] >= xs[k]:
            continue
        left, right = rs[:k], rs[k:]
        sse = float(((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum())
        reduction = parent - sse
        if best is None or reduction > best[1]:
            best = (0.5 * (xs[k - 1] + xs[k]), reduction)
    return best


def one_dim_table(x, y):
    return table_from_arrays(np.asarray(x, dtype=float).reshape(-1, 1), y, names=["x"])


class TestBuildTree:
    def test_zero_gradients_single_leaf(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        tree = gbt_build_tree(X, np.zeros(20), np.ones(20), max_depth=4)
        assert tree.n_nodes == 1
        assert tree.value[0] == 0.0
        assert tree.feature[0] == -1

    def test_step_fixture_splits_in_gap(self):
        # {x < 0 -> 0, x >= 0 -> 10}: populations at [-3, -1] and [2, 5]
        rng = np.random.default_rng(1)
        x = np.concatenate([rng.uniform(-3, -1, 40), rng.uniform(2, 5, 40)])
        y = np.where(x < 0, 0.0, 10.0)
        grad = 0.0 - y  # residuals from a zero prediction
        tree = gbt_build_tree(x.reshape(-1, 1), grad, np.ones(80), max_depth=1, reg_lambda=0.0)
        assert tree.feature[0] == 0
        assert -1.0 < tree.threshold[0] < 2.0  # inside the gap
        oracle_thr, _ = brute_force_best_split(x, -grad)
        assert tree.threshold[0] == oracle_thr

    def test_gain_equals_variance_reduction_oracle(self):
        # two-cluster toy, lambda = 0: the chosen split's second-order gain
        # must equal the brute-force SSE reduction
        rng = np.random.default_rng(7)
        x = np.concatenate([rng.normal(-2.0, 0.3, 30), rng.normal(3.0, 0.4, 25)])
        y = np.concatenate([rng.normal(5.0, 0.5, 30), rng.normal(9.0, 0.5, 25)])
        grad = -y
        tree = gbt_build_tree(x.reshape(-1, 1), grad, np.ones(55), max_depth=1, reg_lambda=0.0)
        thr = tree.threshold[0]
        oracle_thr, oracle_reduction = brute_force_best_split(x, y)
        assert thr == oracle_thr
        left = grad[x < thr]
        right = grad[x >= thr]
        gain = (
            left.sum() ** 2 / left.shape[0]
            + right.sum() ** 2 / right.shape[0]
            - grad.sum() ** 2 / grad.shape[0]
        )
        assert gain == pytest.approx(oracle_reduction, rel=1e-9)

    def test_max_depth_respected(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 5))
        y = rng.normal(size=300)
        tree = gbt_build_tree(X, -y, np.ones(300), max_depth=4, reg_lambda=0.0)
        assert tree.max_depth_used() <= 4

    def test_min_child_weight(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        tree = gbt_build_tree(X, -y, np.ones(60), max_depth=6, min_child_weight=5.0)
        leaves = tree.feature < 0
        assert np.all(tree.cover[leaves] >= 5.0)

    def test_subsample_cover(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(100, 2))
        tree = gbt_build_tree(
            X, rng.normal(size=100), np.ones(100),
            subsample=0.5, rng=np.random.default_rng(0),
        )
        assert tree.cover[0] == 50.0

    def test_leaf_value_formula(self):
        # single split, check -sum(g)/(sum(h)+lambda) on both sides
        x = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
        g = np.array([0.0, 0.0, 0.0, -10.0, -10.0])
        tree = gbt_build_tree(x.reshape(-1, 1), g, np.ones(5), max_depth=1, reg_lambda=1.0)
        left, right = int(tree.left[0]), int(tree.right[0])
        assert tree.value[left] == pytest.approx(0.0, abs=1e-15)
        assert tree.value[right] == pytest.approx(20.0 / 3.0, rel=1e-15)


class TestGbtModel:
    def test_zero_trees_predicts_base(self, small_table):
        model = fit_gbt(small_table, n_rounds=0, seed=0)
        pred = model.predict_matrix(small_table.X)
        assert np.all(pred == small_table.y.mean())

    def test_depth_one_tree_hand_walk(self):
        x = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
        g = np.array([0.0, 0.0, 0.0, -10.0, -10.0])
        tree = gbt_build_tree(x.reshape(-1, 1), g, np.ones(5), max_depth=1, reg_lambda=1.0)
        model = GbtModel(
            base_prediction=5.0,
            trees=[tree],
            learning_rate=0.3,
            feature_schema=schema_from_names(["x"]),
        )
        left_value = tree.value[int(tree.left[0])]
        out = model.predict_matrix(np.array([[-1.0]]))
        assert out[0] == 5.0 + 0.3 * left_value

    def test_prediction_decomposition_exact(self, small_table):
        model = fit_gbt(small_table, n_rounds=25, seed=1)
        manual = np.full(small_table.n_rows, model.base_prediction)
        for tree in model.trees:
            manual += model.learning_rate * tree.predict(small_table.X)
        assert np.array_equal(model.predict_matrix(small_table.X), manual)

    def test_train_rmse_non_increasing_full_sample(self, small_table):
        model = fit_gbt(small_table, n_rounds=120, subsample=1.0, seed=2)
        diffs = np.diff(model.train_rmse)
        assert np.all(diffs <= 1e-12)

    def test_determinism(self, small_table):
        a = fit_gbt(small_table, n_rounds=30, seed=9)
        b = fit_gbt(small_table, n_rounds=30, seed=9)
        assert np.array_equal(a.predict_matrix(small_table.X), b.predict_matrix(small_table.X))
        for ta, tb in zip(a.trees, b.trees):
            assert np.array_equal(ta.threshold, tb.threshold)
            assert np.array_equal(ta.feature, tb.feature)

    def test_seed_changes_subsample(self, small_table):
        a = fit_gbt(small_table, n_rounds=10, seed=0)
        b = fit_gbt(small_table, n_rounds=10, seed=1)
        assert not np.array_equal(a.predict_matrix(small_table.X), b.predict_matrix(small_table.X))

    def test_constant_labels(self):
        rng = np.random.default_rng(5)
        table = table_from_arrays(rng.normal(size=(30, 4)), np.full(30, 63.0))
        model = fit_gbt(table, n_rounds=50, seed=0)
        assert np.allclose(model.predict_matrix(table.X), 63.0, atol=1e-6)

    def test_learns_signal(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 10, size=(200, 3))
        y = np.clip(3.0 * X[:, 0] + 20.0 + rng.normal(0, 0.5, 200), 0, 100)
        table = table_from_arrays(X, y)
        model = fit_gbt(table, n_rounds=400, learning_rate=0.05, subsample=1.0, seed=0)
        pred = model.predict_matrix(X)
        assert np.sqrt(np.mean((pred - y) ** 2)) < 2.0

    def test_root_expectation_cover_weighted(self):
        x = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
        g = np.array([0.0, 0.0, 0.0, -10.0, -10.0])
        tree = gbt_build_tree(x.reshape(-1, 1), g, np.ones(5), max_depth=1, reg_lambda=1.0)
        left, right = int(tree.left[0]), int(tree.right[0])
        expected = (3 * tree.value[left] + 2 * tree.value[right]) / 5
        assert tree.root_expectation() == pytest.approx(expected, rel=1e-15)
