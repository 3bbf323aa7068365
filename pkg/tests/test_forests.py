"""Tree growing against an exhaustive split oracle, forest behavior,
feature-importance accounting, and the gradient-descent logistic baseline.

The oracle recomputes the weighted Gini decrease from its textbook
definition (impurity of parent minus mass-weighted child impurities), a
different formula from the implementation's mass-form cumsums.
"""
from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inductive_bench.errors import ConfigError
from inductive_bench.forests import (ForestConfig, LinearModel, LogRegConfig,
                                     Tree, balanced_class_weights, grow_tree,
                                     rf_train, rf_predict_proba, rf_predict,
                                     rf_importance_split, save_forest,
                                     load_forest, logreg_train,
                                     logreg_predict_proba, logreg_predict)


def oracle_best_split(X, y, w, n_classes=2):
    """Exhaustive search over every feature and midpoint threshold.

    Ties keep the first maximum in (feature, ascending threshold) order.
    Returns (feature, threshold, gain) with feature -1 when nothing splits.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    w = np.asarray(w, dtype=np.float64)
    n, d = X.shape
    total = w.sum()

    def gini(mask):
        ww = w[mask]
        tot = ww.sum()
        if tot == 0.0:
            return 0.0, 0.0
        m = np.bincount(y[mask], weights=ww, minlength=n_classes)
        return 1.0 - ((m / tot) ** 2).sum(), tot

    g_parent, _ = gini(np.ones(n, dtype=bool))
    best = (-1, np.nan, -np.inf)
    for j in range(d):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = lo + (hi - lo) / 2.0
            if thr >= hi:
                thr = lo
            left = X[:, j] <= thr
            gl, lt = gini(left)
            gr, rt = gini(~left)
            gain = g_parent - (lt / total) * gl - (rt / total) * gr
            if gain > best[2] + 1e-12:
                best = (j, float(thr), float(gain))
    return best


def _tree_eq(a: Tree, b: Tree) -> bool:
    return (np.array_equal(a.feature, b.feature)
            and np.array_equal(a.threshold, b.threshold, equal_nan=True)
            and np.array_equal(a.left, b.left)
            and np.array_equal(a.right, b.right)
            and np.array_equal(a.value, b.value)
            and np.array_equal(a.importance, b.importance))


class TestSplitOracle:
    @pytest.mark.parametrize("seed", range(8))
    def test_root_split_matches_exhaustive_search(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 17))  # the exhaustive search stays tiny
        d = int(rng.integers(1, 5))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n)
        if len(np.unique(y)) < 2:
            y[0] = 1 - y[0]
        w = rng.uniform(0.5, 2.0, size=n)
        tree = grow_tree(X, y, w)
        f, thr, gain = oracle_best_split(X, y, w)
        assert tree.feature[0] == f
        assert tree.threshold[0] == pytest.approx(thr, abs=1e-12)

    def test_perfect_feature_beats_uninformative_one(self):
        # Feature 0 splits into two mixed halves (zero gain), feature 1
        # separates the classes exactly.
        X = np.array([[1.0, 0.0], [1.0, 5.0], [2.0, 0.0], [2.0, 5.0]])
        y = np.array([0, 1, 0, 1])
        w = np.array([1.0, 1.0, 1.0, 1.0])
        tree = grow_tree(X, y, w)
        f, thr, gain = oracle_best_split(X, y, w)
        assert (tree.feature[0], f) == (1, 1)
        assert tree.threshold[0] == pytest.approx(2.5)
        assert gain == pytest.approx(0.5)

    def test_tie_breaks_to_earliest_feature(self):
        # Both columns are identical, so their gains tie exactly.
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        y = np.array([0, 0, 1, 1])
        tree = grow_tree(X, y, np.ones(4))
        assert tree.feature[0] == 0

    def test_tie_breaks_to_lowest_threshold(self):
        # Symmetric labels: splitting at 0.5 or 2.5 gives the same gain.
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1, 0, 0, 1])
        tree = grow_tree(X, y, np.ones(4))
        assert tree.threshold[0] == pytest.approx(0.5)

    def test_midpoint_guard_on_adjacent_floats(self):
        # lo and its next representable float: the midpoint rounds onto hi,
        # so the guard must fall back to lo to keep lo on the left side.
        lo = 1.0
        hi = np.nextafter(lo, 2.0)
        X = np.array([[lo], [hi], [hi], [lo]])
        y = np.array([0, 1, 1, 0])
        tree = grow_tree(X, y, np.ones(4))
        assert tree.threshold[0] == lo
        # the split still routes lo left and hi right
        assert np.all(X[:, 0][X[:, 0] <= tree.threshold[0]] == lo)

    def test_pure_node_becomes_leaf(self):
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1, 1, 1])
        tree = grow_tree(X, y, np.ones(3))
        assert tree.feature[0] == -1
        assert np.isnan(tree.threshold[0])
        np.testing.assert_allclose(tree.value[0], [0.0, 1.0])

    def test_constant_features_become_leaf(self):
        X = np.zeros((4, 2))
        y = np.array([0, 1, 0, 1])
        tree = grow_tree(X, y, np.ones(4))
        assert tree.feature[0] == -1

    def test_deep_tree_fits_training_data(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] * X[:, 1] > 0).astype(np.int64)  # no single split solves it
        tree = grow_tree(X, y, np.ones(60))
        pred = tree.predict_distribution(X).argmax(axis=1)
        np.testing.assert_array_equal(pred, y)  # unlimited depth: exact fit


class TestForest:
    def _data(self, n=200, d=6, seed=0, signal=2.0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n)
        X[y == 1, 0] += signal
        return X, y

    def test_deterministic_across_runs(self):
        X, y = self._data()
        cfg = ForestConfig(n_trees=10, seed=5)
        a = rf_train(X, y, cfg)
        b = rf_train(X, y, cfg)
        assert all(_tree_eq(ta, tb) for ta, tb in zip(a.trees, b.trees))
        np.testing.assert_array_equal(a.feature_importances, b.feature_importances)

    def test_rng_argument_overrides_config_seed(self):
        X, y = self._data()
        a = rf_train(X, y, ForestConfig(n_trees=5, seed=0), rng=99)
        b = rf_train(X, y, ForestConfig(n_trees=5, seed=1), rng=99)
        assert all(_tree_eq(ta, tb) for ta, tb in zip(a.trees, b.trees))

    def test_trees_differ_across_bootstrap(self):
        X, y = self._data()
        forest = rf_train(X, y, ForestConfig(n_trees=5, seed=0))
        assert not all(_tree_eq(forest.trees[0], t) for t in forest.trees[1:])

    def test_separable_accuracy(self):
        X, y = self._data(signal=3.0)
        forest = rf_train(X, y, ForestConfig(n_trees=30, seed=0))
        Xt, yt = self._data(seed=1, signal=3.0)
        acc = (rf_predict(forest, Xt) == yt).mean()
        assert acc > 0.9

    def test_predict_proba_is_illicit_column(self):
        X, y = self._data()
        forest = rf_train(X, y, ForestConfig(n_trees=10, seed=0))
        p = rf_predict_proba(forest, X)
        dist = forest.predict_distribution(X)
        np.testing.assert_array_equal(p, dist[:, 1])
        assert np.all((p >= 0) & (p <= 1))

    def test_importances_normalized(self):
        X, y = self._data()
        forest = rf_train(X, y, ForestConfig(n_trees=10, seed=0))
        assert forest.feature_importances.shape == (6,)
        assert forest.feature_importances.sum() == pytest.approx(1.0)
        assert np.all(forest.feature_importances >= 0)

    def test_informative_feature_dominates(self):
        X, y = self._data(signal=3.0)
        forest = rf_train(X, y, ForestConfig(n_trees=20, seed=0))
        imp = forest.feature_importances
        assert imp[0] > imp[1:].max() * 2

    def test_single_class_degenerates_with_warning(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        y = np.zeros(10, dtype=np.int64)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            forest = rf_train(X, y, ForestConfig(n_trees=3, seed=0))
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)
        assert forest.degenerate_class == 0
        np.testing.assert_allclose(rf_predict_proba(forest, X), 0.0)

    def test_mtry_default_is_sqrt(self):
        assert ForestConfig().resolve_mtry(165) == 12
        assert ForestConfig().resolve_mtry(421) == 20
        assert ForestConfig(features_per_split=7).resolve_mtry(165) == 7
        with pytest.raises(ConfigError):
            ForestConfig(features_per_split=10).resolve_mtry(6)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ForestConfig(n_trees=0)
        with pytest.raises(ConfigError):
            ForestConfig(class_weighting="focal")
        with pytest.raises(ConfigError):
            ForestConfig(min_samples_split=1)

    def test_balanced_weights_formula(self):
        y = np.array([0] * 30 + [1] * 10)
        w = balanced_class_weights(y)
        assert w[0] == pytest.approx(40 / (2 * 30))
        assert w[1] == pytest.approx(40 / (2 * 10))

    def test_save_load_round_trip(self, tmp_path):
        X, y = self._data()
        forest = rf_train(X, y, ForestConfig(n_trees=4, seed=0))
        path = str(tmp_path / "forest.npz")
        save_forest(forest, path)
        back = load_forest(path)
        assert back.n_trees == forest.n_trees
        assert all(_tree_eq(a, b) for a, b in zip(forest.trees, back.trees))
        np.testing.assert_array_equal(rf_predict_proba(back, X),
                                      rf_predict_proba(forest, X))

    def test_feature_count_mismatch_rejected(self):
        X, y = self._data()
        forest = rf_train(X, y, ForestConfig(n_trees=2, seed=0))
        with pytest.raises(ConfigError):
            rf_predict_proba(forest, X[:, :3])

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_leaf_distributions_are_probabilities(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(30, 3))
        y = rng.integers(0, 2, size=30)
        if len(np.unique(y)) < 2:
            y[0] = 1 - y[0]
        forest = rf_train(X, y, ForestConfig(n_trees=3, seed=0), rng=seed)
        dist = forest.predict_distribution(X)
        np.testing.assert_allclose(dist.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(dist >= 0)


class TestImportanceSplit:
    def test_shares_with_uniform_importance(self):
        # A forest whose importance is uniform over 165 columns splits
        # 94/165 local vs 71/165 aggregate by construction.
        forest = rf_train(np.random.default_rng(0).normal(size=(40, 165)),
                          np.random.default_rng(1).integers(0, 2, size=40),
                          ForestConfig(n_trees=2, seed=0))
        forest.feature_importances[:] = 1.0 / 165
        split = rf_importance_split(forest)
        assert split.local_share == pytest.approx(94 / 165)
        assert split.aggregate_share == pytest.approx(71 / 165)
        assert split.local_share + split.aggregate_share == pytest.approx(1.0)

    def test_top_features_ranked_and_tagged(self):
        forest = rf_train(np.random.default_rng(0).normal(size=(40, 165)),
                          np.random.default_rng(1).integers(0, 2, size=40),
                          ForestConfig(n_trees=2, seed=0))
        imp = np.zeros(165)
        imp[3] = 0.5
        imp[100] = 0.3
        imp[7] = 0.2
        forest.feature_importances[:] = imp
        split = rf_importance_split(forest, top_k=3)
        cols = [t[0] for t in split.top_features]
        tags = [t[2] for t in split.top_features]
        assert cols == [3, 100, 7]
        assert tags == ["local", "aggregate", "local"]

    def test_boundary_validation(self):
        forest = rf_train(np.random.default_rng(0).normal(size=(10, 5)),
                          np.array([0, 1] * 5), ForestConfig(n_trees=1, seed=0))
        with pytest.raises(ConfigError):
            rf_importance_split(forest, local_boundary=6)


class TestLogReg:
    def _data(self, n=120, d=4, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n)
        X[y == 1] += 2.0
        return X, y

    def test_zero_init_gives_half_probability(self):
        X, y = self._data()
        model = LinearModel(weight=np.zeros((X.shape[1], 2)), bias=np.zeros(2),
                            config=LogRegConfig())
        np.testing.assert_allclose(logreg_predict_proba(model, X), 0.5)

    def test_first_epoch_loss_is_ln2(self):
        # With zero-initialized logits every row costs ln 2, and balanced
        # class weights average to exactly 1, so the first recorded loss
        # is ln 2 regardless of the class mix.
        X, y = self._data()
        model = logreg_train(X, y, LogRegConfig(epochs=1))
        assert model.loss_history[0] == pytest.approx(np.log(2.0), rel=1e-9)

    def test_learns_separable_data(self):
        X, y = self._data()
        model = logreg_train(X, y)
        acc = (logreg_predict(model, X) == y).mean()
        assert acc > 0.95

    def test_loss_monotone_decreasing_early(self):
        X, y = self._data()
        model = logreg_train(X, y, LogRegConfig(epochs=50))
        losses = model.loss_history
        assert losses[0] > losses[-1]
        assert len(losses) == 50

    def test_l2_shrinks_weights(self):
        X, y = self._data()
        loose = logreg_train(X, y, LogRegConfig(l2=0.0))
        tight = logreg_train(X, y, LogRegConfig(l2=1.0))
        assert (np.abs(tight.weight).sum() < np.abs(loose.weight).sum())

    def test_deterministic(self):
        X, y = self._data()
        a = logreg_train(X, y)
        b = logreg_train(X, y)
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_softmax_pair_equals_logistic_margin(self):
        X, y = self._data()
        model = logreg_train(X, y, LogRegConfig(epochs=20))
        z = X @ model.weight + model.bias
        e = np.exp(z - z.max(axis=1, keepdims=True))
        softmax_p1 = (e / e.sum(axis=1, keepdims=True))[:, 1]
        np.testing.assert_allclose(logreg_predict_proba(model, X), softmax_p1,
                                   rtol=1e-10)

    def test_input_validation(self):
        with pytest.raises(ConfigError):
            logreg_train(np.zeros((3, 2)), np.array([0, 1, 2]))
        with pytest.raises(ConfigError):
            logreg_train(np.zeros(3), np.array([0, 1, 0]))
