"""Attribution tests.

The exact enumerator serves as the oracle for the Monte-Carlo estimator;
the exact enumerator itself is checked against the axioms and against
closed forms for additive value functions, which are derivable by hand:
for f(x) = sum_j f_j(x_j) the attribution of feature j is
f_j(explicand_j) - mean_z f_j(z_j) under interventional semantics.
"""

import math

import numpy as np
import pytest

from glassbo.shapley import (
    AttributionEstimate,
    ShapleyGame,
    check_sample_size,
    compute_payout,
    estimate_shapley,
    estimate_shapley_shared,
    exact_shapley,
    find_sufficient_k,
    min_pairwise_gap,
)


def _quadratic_game(rng, p, m=16):
    A = rng.standard_normal((p, p))
    b = rng.standard_normal(p)

    def fn(X):
        X = np.atleast_2d(X)
        return np.einsum("ij,jk,ik->i", X, A, X) + X @ b

    return ShapleyGame(fn, rng.standard_normal(p), rng.standard_normal((m, p)))


class TestEstimate:
    def test_dummy_feature_gets_exact_zero(self):
        def fn(X):
            return np.atleast_2d(X)[:, 0]

        game = ShapleyGame(fn, np.array([1.0, 2.0]), np.random.default_rng(0).normal(size=(8, 2)))
        for K in (1, 10, 100):
            est = estimate_shapley(game, K, np.random.default_rng(K))
            assert est.phi[1] == 0.0

    def test_additive_closed_form_within_error(self):
        def fn(X):
            X = np.atleast_2d(X)
            return X[:, 0] + 2.0 * X[:, 1]

        game = ShapleyGame(fn, np.array([1.0, 1.0]), np.array([[0.0, 0.0], [1.0, 1.0]]))
        exact = exact_shapley(game)
        assert exact.phi == pytest.approx([0.5, 1.0], abs=1e-12)
        est = estimate_shapley(game, 2000, np.random.default_rng(1))
        assert np.all(np.abs(est.phi - exact.phi) <= 3 * np.maximum(est.stderr, 1e-12))

    def test_mc_within_three_stderr_of_exact(self):
        # acceptance-grade consistency at reduced scale; the full version
        # lives in the acceptance suite
        rng = np.random.default_rng(42)
        hits = total = 0
        for _ in range(20):
            game = _quadratic_game(rng, 4)
            exact = exact_shapley(game)
            est = estimate_shapley(game, 1000, rng)
            hits += int(np.sum(np.abs(est.phi - exact.phi) <= 3 * est.stderr))
            total += 4
        assert hits / total >= 0.9

    def test_stderr_scales_inverse_sqrt_k(self):
        rng = np.random.default_rng(7)
        ratios = []
        for _ in range(50):
            game = _quadratic_game(rng, 3)
            e1 = estimate_shapley(game, 250, rng)
            e4 = estimate_shapley(game, 1000, rng)
            ratios.append(np.median(e1.stderr) / np.median(e4.stderr))
        assert 1.6 <= float(np.median(ratios)) <= 2.4

    def test_deterministic_for_fixed_seed(self):
        game = _quadratic_game(np.random.default_rng(3), 3)
        a = estimate_shapley(game, 500, 11)
        b = estimate_shapley(game, 500, 11)
        assert np.array_equal(a.phi, b.phi)
        assert a.seed == 11

    def test_shared_draws_make_linearity_exact(self):
        rng = np.random.default_rng(5)
        p = 3
        A = rng.standard_normal((p, p))
        b = rng.standard_normal(p)
        explicand = rng.standard_normal(p)
        background = rng.standard_normal((32, p))

        def f(X):
            X = np.atleast_2d(X)
            return np.einsum("ij,jk,ik->i", X, A, X)

        def g(X):
            return np.atleast_2d(X) @ b

        lam = 2.5

        def combined(X):
            return f(X) - lam * g(X)

        games = {
            "f": ShapleyGame(f, explicand, background),
            "g": ShapleyGame(g, explicand, background),
            "c": ShapleyGame(combined, explicand, background),
        }
        est = estimate_shapley_shared(games, 400, 13)
        assert est["c"].phi == pytest.approx(est["f"].phi - lam * est["g"].phi, abs=1e-10)


class TestExact:
    def test_efficiency_on_random_games(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = int(rng.integers(2, 6))
            game = _quadratic_game(rng, p)
            est = exact_shapley(game)
            payout = compute_payout(game)
            assert est.phi.sum() == pytest.approx(payout, abs=1e-10)

    def test_symmetry(self):
        def fn(X):
            X = np.atleast_2d(X)
            return X[:, 0] * X[:, 1]

        rng = np.random.default_rng(2)
        z = rng.standard_normal(8)
        background = np.column_stack([z, z])  # symmetric in both coordinates
        game = ShapleyGame(fn, np.array([1.0, 1.0]), background)
        est = exact_shapley(game)
        assert est.phi[0] == pytest.approx(est.phi[1], abs=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        p = 3
        explicand = rng.standard_normal(p)
        background = rng.standard_normal((16, p))
        A1 = rng.standard_normal((p, p))
        A2 = rng.standard_normal((p, p))
        a, b = 1.7, -0.3

        def f1(X):
            X = np.atleast_2d(X)
            return np.einsum("ij,jk,ik->i", X, A1, X)

        def f2(X):
            X = np.atleast_2d(X)
            return np.einsum("ij,jk,ik->i", X, A2, X)

        def combo(X):
            return a * f1(X) + b * f2(X)

        phi1 = exact_shapley(ShapleyGame(f1, explicand, background)).phi
        phi2 = exact_shapley(ShapleyGame(f2, explicand, background)).phi
        phic = exact_shapley(ShapleyGame(combo, explicand, background)).phi
        assert phic == pytest.approx(a * phi1 + b * phi2, abs=1e-10)

    def test_dummy(self):
        def fn(X):
            X = np.atleast_2d(X)
            return X[:, 0] ** 2 + X[:, 2]

        rng = np.random.default_rng(6)
        game = ShapleyGame(fn, rng.standard_normal(3), rng.standard_normal((16, 3)))
        est = exact_shapley(game)
        assert est.phi[1] == pytest.approx(0.0, abs=1e-12)

    def test_positive_scaling_preserves_order(self):
        rng = np.random.default_rng(8)
        game = _quadratic_game(rng, 4)
        phi = exact_shapley(game).phi
        scaled = ShapleyGame(
            lambda X: 3.5 * game.value_fn(X), game.explicand, game.background
        )
        phi_scaled = exact_shapley(scaled).phi
        assert phi_scaled == pytest.approx(3.5 * phi, abs=1e-10)
        assert np.array_equal(np.argsort(phi), np.argsort(phi_scaled))

    def test_refuses_large_p(self):
        rng = np.random.default_rng(0)
        game = ShapleyGame(
            lambda X: np.atleast_2d(X).sum(axis=1), rng.standard_normal(11), rng.standard_normal((4, 11))
        )
        with pytest.raises(ValueError):
            exact_shapley(game)


class TestPayout:
    def test_constant_value_fn(self):
        game = ShapleyGame(
            lambda X: np.full(np.atleast_2d(X).shape[0], 3.0),
            np.array([1.0]),
            np.array([[0.0]]),
        )
        assert compute_payout(game) == 0.0

    def test_explicand_equals_single_background_point(self):
        def fn(X):
            return np.atleast_2d(X)[:, 0] ** 2

        game = ShapleyGame(fn, np.array([2.0]), np.array([[2.0]]))
        assert compute_payout(game) == 0.0

    def test_matches_exact_shapley_sum(self):
        rng = np.random.default_rng(12)
        game = _quadratic_game(rng, 4)
        assert compute_payout(game) == pytest.approx(exact_shapley(game).phi.sum(), abs=1e-10)


class TestAdequacy:
    def _linear_game(self, background):
        def fn(X):
            X = np.atleast_2d(X)
            return X[:, 0] + X[:, 1]

        return ShapleyGame(fn, np.array([2.0, 3.0]), np.asarray(background, float))

    def test_exact_estimates_always_sufficient(self):
        rng = np.random.default_rng(3)
        game = _quadratic_game(rng, 3)
        est = exact_shapley(game)
        verdict = check_sample_size({"m": est}, {"m": game})
        assert verdict.games["m"].efficiency_error == pytest.approx(0.0, abs=1e-10)
        assert verdict.overall

    def test_worked_threshold_case(self):
        # attributions (2, 3) give threshold 1; an efficiency error of 0.5
        # passes while 1.5 fails
        est = AttributionEstimate(phi=np.array([2.0, 3.0]), stderr=np.zeros(2), K=100)
        game_pass = self._linear_game([[0.5, 0.0]])  # payout 5 - 0.5 = 4.5 -> delta 0.5
        verdict = check_sample_size({"cb": est}, {"cb": game_pass})
        assert verdict.games["cb"].threshold == pytest.approx(1.0)
        assert verdict.games["cb"].efficiency_error == pytest.approx(0.5)
        assert verdict.overall

        game_fail = self._linear_game([[1.5, 0.0]])  # payout 3.5 -> delta 1.5
        verdict = check_sample_size({"cb": est}, {"cb": game_fail})
        assert verdict.games["cb"].efficiency_error == pytest.approx(1.5)
        assert not verdict.overall

    def test_single_feature_always_sufficient(self):
        def fn(X):
            return np.atleast_2d(X)[:, 0]

        game = ShapleyGame(fn, np.array([1.0]), np.array([[0.0], [2.0]]))
        est = estimate_shapley(game, 10, 0)
        verdict = check_sample_size({"m": est}, {"m": game})
        assert verdict.games["m"].threshold == math.inf
        assert verdict.overall

    def test_tied_attributions_need_zero_error(self):
        est = AttributionEstimate(phi=np.array([1.0, 1.0]), stderr=np.zeros(2), K=10)
        game = self._linear_game([[0.0, 0.0]])  # payout 5, sum(phi) = 2 -> delta 3
        verdict = check_sample_size({"v": est}, {"v": game})
        assert verdict.games["v"].threshold == 0.0
        assert not verdict.overall

    def test_mismatched_keys_rejected(self):
        est = AttributionEstimate(phi=np.zeros(2), stderr=np.zeros(2), K=1)
        game = self._linear_game([[0.0, 0.0]])
        with pytest.raises(ValueError):
            check_sample_size({"a": est}, {"b": game})

    def test_forward_search_doubles_until_pass(self):
        # constructed so K = 10 fails but a larger K passes: a steep third
        # coordinate inflates the background-mean sampling error while the
        # first two keep a small stable attribution gap
        rng = np.random.default_rng(0)

        def fn(X):
            X = np.atleast_2d(X)
            return X[:, 0] + 1.5 * X[:, 1] + 20.0 * X[:, 2]

        game = ShapleyGame(fn, np.array([1.0, 1.0, 0.0]), rng.normal(size=(4000, 3)))
        small = estimate_shapley(game, 10, 5)
        small_verdict = check_sample_size({"v": small}, {"v": game})
        assert not small_verdict.overall

        K, verdict, estimates = find_sufficient_k({"v": game}, rng=5, k_start=10, k_cap=10**6)
        assert verdict.overall
        assert K > 10
        assert set(estimates) == {"v"}

    def test_min_pairwise_gap(self):
        assert min_pairwise_gap(np.array([2.0, 3.0])) == 1.0
        assert min_pairwise_gap(np.array([1.0])) == math.inf
        assert min_pairwise_gap(np.array([4.0, 1.0, 4.5])) == 0.5
