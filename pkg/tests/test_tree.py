"""Regression-tree tests: threshold recovery against the published-style
rule, brute-force best-split verification, and leaf-mean identities."""

import numpy as np
import pytest

from glassbo.tree import TreeRule, fit_tree_rule, _best_split


def _rule_history(rng, n=60, threshold=-11.05, low_value=-57.72):
    """Targets are low_value exactly when feature 0 is below threshold."""
    x0 = np.concatenate(
        [
            rng.uniform(threshold - 20.0, threshold - 0.5, size=n // 2),
            rng.uniform(threshold + 0.5, threshold + 20.0, size=n - n // 2),
        ]
    )
    x1 = rng.standard_normal(n)
    X = np.column_stack([x0, x1])
    y = np.where(x0 < threshold, low_value, 0.0)
    return [(X[i], float(y[i])) for i in range(n)]


class TestFit:
    def test_recovers_threshold_rule(self):
        rng = np.random.default_rng(0)
        history = _rule_history(rng)
        rule = fit_tree_rule(history, max_depth=1, feature_names=["phi_m[lif]", "phi_m[low]"])
        root = rule.root
        assert root.feature == 0
        # threshold lies between the closest straddling samples
        x0 = np.array([f[0] for f, _ in history])
        below = x0[x0 < -11.05].max()
        above = x0[x0 > -11.05].min()
        assert below < root.threshold < above
        assert root.left.value == pytest.approx(-57.72)
        assert root.right.value == pytest.approx(0.0)

    def test_constant_targets_give_single_leaf(self):
        rng = np.random.default_rng(1)
        history = [(rng.standard_normal(2), 5.0) for _ in range(20)]
        rule = fit_tree_rule(history)
        assert rule.root.is_leaf
        assert rule.root.value == 5.0

    def test_first_split_matches_brute_force(self):
        # oracle: exhaustive scan over all (feature, midpoint) splits
        rng = np.random.default_rng(2)
        n = 40
        X = rng.uniform(-1, 1, size=(n, 2))
        y = 3.0 * (X[:, 0] > 0.2) + 0.5 * (X[:, 1] > 0.0) + 0.01 * rng.standard_normal(n)

        best_gain, best = -np.inf, None
        sse = lambda v: float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0
        parent = sse(y)
        for j in range(2):
            xs = np.sort(np.unique(X[:, j]))
            for a, b in zip(xs[:-1], xs[1:]):
                thr = 0.5 * (a + b)
                mask = X[:, j] < thr
                if mask.sum() < 5 or (~mask).sum() < 5:
                    continue
                gain = parent - sse(y[mask]) - sse(y[~mask])
                if gain > best_gain:
                    best_gain, best = gain, (j, thr)

        split = _best_split(X, y, min_leaf=5)
        assert split is not None
        assert (split[0], split[1]) == pytest.approx(best)
        assert split[2] == pytest.approx(best_gain)

    def test_rejects_tiny_history(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            fit_tree_rule([(rng.standard_normal(2), 0.0) for _ in range(5)])

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(4)
        history = _rule_history(rng, n=30)
        rule = fit_tree_rule(history, max_depth=3)
        for leaf in rule.root.leaves():
            assert leaf.n >= 5

    def test_leaf_value_is_mean_of_routed_targets(self):
        rng = np.random.default_rng(5)
        history = _rule_history(rng, n=50)
        rule = fit_tree_rule(history, max_depth=2)
        routed: dict[int, list[float]] = {}
        for feats, target in history:
            leaf = rule.root.route(np.asarray(feats))
            routed.setdefault(id(leaf), []).append(target)
        for leaf in rule.root.leaves():
            assert leaf.value == pytest.approx(np.mean(routed[id(leaf)]))


class TestRule:
    def test_fires_on_best_leaf_side_only(self):
        rng = np.random.default_rng(6)
        rule = fit_tree_rule(_rule_history(rng), max_depth=1)
        assert rule.fires(np.array([-20.0, 0.0]))
        assert not rule.fires(np.array([0.0, 0.0]))

    def test_single_leaf_never_fires(self):
        rng = np.random.default_rng(7)
        rule = fit_tree_rule([(rng.standard_normal(2), 1.0) for _ in range(12)])
        assert not rule.fires(np.array([0.0, 0.0]))

    def test_predict_routes_to_leaf_mean(self):
        rng = np.random.default_rng(8)
        rule = fit_tree_rule(_rule_history(rng), max_depth=1)
        assert rule.predict(np.array([-30.0, 0.0])) == pytest.approx(-57.72)

    def test_json_roundtrip(self):
        rng = np.random.default_rng(9)
        rule = fit_tree_rule(_rule_history(rng), max_depth=2, feature_names=["a", "b"])
        back = TreeRule.from_dict(rule.to_dict())
        assert back.to_json() == rule.to_json()
        probe = np.array([-15.0, 1.0])
        assert back.fires(probe) == rule.fires(probe)

    def test_describe_names_features(self):
        rng = np.random.default_rng(10)
        rule = fit_tree_rule(_rule_history(rng), max_depth=1, feature_names=["phi_m[lif]", "phi_m[low]"])
        assert "phi_m[lif]" in rule.describe()
