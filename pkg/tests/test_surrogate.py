"""Surrogate tests.

Closed-form oracles are computed inline: the two-point GP posterior is
worked out from the 2x2 system directly, noise recovery is checked
against replicate standard deviations, and the empirical-Bayes grid is
validated on data simulated from a known kernel.
"""

import numpy as np
import pytest

from glassbo.space import Design, Observation, ParamSpace, design_from_arrays
from glassbo.surrogate import (
    KernelConfig,
    SurrogateError,
    estimate_hyperparams,
    fit_gp,
    fit_imprecise_gp,
    fit_noise_model,
    predict,
)


def _rbf(a, b, r):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / r**2)


# ---------------------------------------------------------------------------
# estimate_hyperparams
# ---------------------------------------------------------------------------


class TestEstimateHyperparams:
    def test_constant_target_prior_mean_and_determinism(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, size=(10, 2))
        d = design_from_arrays(X, np.full(10, 4.25))
        k1 = estimate_hyperparams(d)
        k2 = estimate_hyperparams(d)
        assert k1.prior_mean == 4.25
        assert k1.range == k2.range  # deterministic grid maximizer

    def test_prior_mean_is_sample_mean(self):
        d = design_from_arrays([[0.0], [1.0]], [0.0, 10.0])
        assert estimate_hyperparams(d).prior_mean == 5.0

    def test_recovers_range_from_simulated_gp(self):
        # simulate 20 points (10 sites, 2 replicates each) from a known GP:
        # range 2.0, observation-noise variance 1e-4
        rng = np.random.default_rng(11)
        sites = np.sort(rng.uniform(-5, 5, size=10))[:, None]
        K = _rbf(sites, sites, 2.0) + 1e-10 * np.eye(10)
        f = np.linalg.cholesky(K) @ rng.standard_normal(10)
        X = np.repeat(sites, 2, axis=0)
        y = np.repeat(f, 2) + 1e-2 * rng.standard_normal(20)
        d = design_from_arrays(X, y)
        k = estimate_hyperparams(d, ParamSpace([-5.0], [5.0]))
        assert 1.0 <= k.range <= 4.0

    def test_degenerate_design_rejected(self):
        d = design_from_arrays([[1.0], [1.0]], [0.0, 1.0])
        with pytest.raises(SurrogateError):
            estimate_hyperparams(d)

    def test_replicates_set_nugget_to_pooled_variance(self):
        t0, t1 = np.array([0.0]), np.array([1.0])
        d = Design(
            [
                Observation(t0, 1.0),
                Observation(t0, 3.0),  # var 2.0
                Observation(t1, 10.0),
                Observation(t1, 14.0),  # var 8.0
            ]
        )
        k = estimate_hyperparams(d)
        assert k.nugget == pytest.approx((2.0 + 8.0) / 2.0)


# ---------------------------------------------------------------------------
# fit_gp / predict
# ---------------------------------------------------------------------------


class TestFitPredict:
    def test_interpolates_single_observation(self):
        d = design_from_arrays([[0.3, -0.7]], [7.0])
        gp = fit_gp(d, KernelConfig(range=1.0, prior_mean=0.0, nugget=1e-12))
        m, s = gp.predict(np.array([0.3, -0.7]))
        assert m == pytest.approx(7.0, abs=1e-6)
        assert s <= 1e-3

    def test_reverts_to_prior_far_away(self):
        d = design_from_arrays([[0.0], [1.0]], [3.0, 5.0])
        gp = fit_gp(d, KernelConfig(range=0.5, prior_mean=-2.0, nugget=1e-10))
        m, s = gp.predict(np.array([40.0]))
        assert m == pytest.approx(-2.0, abs=1e-6)
        assert s == pytest.approx(1.0, abs=1e-6)  # unit-amplitude prior sd

    def test_two_point_closed_form(self):
        # oracle: direct 2x2 solve, independent of the implementation
        r, nug, m0 = 1.3, 1e-8, 0.7
        x = np.array([[0.0], [1.0]])
        y = np.array([2.0, -1.0])
        xs = np.array([[0.4]])
        K = _rbf(x, x, r) + nug * np.eye(2)
        ks = _rbf(xs, x, r)[0]
        Kinv = np.linalg.inv(K)
        mean_oracle = m0 + ks @ Kinv @ (y - m0)
        var_oracle = 1.0 - ks @ Kinv @ ks

        gp = fit_gp(design_from_arrays(x, y), KernelConfig(range=r, prior_mean=m0, nugget=nug))
        m, s = predict(gp, np.array([0.4]))
        assert m == pytest.approx(mean_oracle, abs=1e-10)
        assert s**2 == pytest.approx(var_oracle, abs=1e-10)

    def test_sd_smaller_at_datum_than_at_far_corner(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(6, 2))
        gp = fit_gp(
            design_from_arrays(X, rng.standard_normal(6)),
            KernelConfig(range=0.8, prior_mean=0.0, nugget=1e-8),
        )
        _, s_at = gp.predict(X[0])
        _, s_far = gp.predict(np.array([50.0, 50.0]))
        assert s_at <= s_far

    def test_predict_is_deterministic(self):
        d = design_from_arrays([[0.0], [1.0], [2.0]], [1.0, 0.0, 3.0])
        gp = fit_gp(d, KernelConfig(range=1.0, prior_mean=0.5, nugget=1e-8))
        q = np.array([0.77])
        assert gp.predict(q) == gp.predict(q)

    def test_batch_equals_loop(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-2, 2, size=(12, 3))
        gp = fit_gp(
            design_from_arrays(X, rng.standard_normal(12)),
            KernelConfig(range=1.5, prior_mean=0.1, nugget=1e-6),
        )
        Q = rng.uniform(-2, 2, size=(100, 3))
        mean_b, sd_b = gp.predict_batch(Q)
        for i in range(100):
            m, s = gp.predict(Q[i])
            # BLAS paths differ between matrix-matrix and matrix-vector,
            # so equality is up to last-bit rounding
            assert m == pytest.approx(mean_b[i], rel=1e-12, abs=1e-12)
            assert s == pytest.approx(sd_b[i], rel=1e-12, abs=1e-12)

    def test_duplicate_inputs_with_zero_nugget_fail_helpfully(self):
        d = design_from_arrays([[0.0], [0.0]], [1.0, 2.0])
        with pytest.raises(SurrogateError, match="nugget"):
            fit_gp(d, KernelConfig(range=1.0, prior_mean=0.0, nugget=0.0))

    def test_dimension_mismatch(self):
        d = design_from_arrays([[0.0, 1.0]], [1.0])
        gp = fit_gp(d, KernelConfig(range=1.0, nugget=1e-8))
        with pytest.raises(ValueError):
            gp.predict(np.array([0.0]))

    def test_sd_nonnegative_on_random_grid(self):
        rng = np.random.default_rng(21)
        X = rng.uniform(-3, 3, size=(25, 2))
        gp = fit_gp(
            design_from_arrays(X, rng.standard_normal(25)),
            KernelConfig(range=0.3, prior_mean=0.0, nugget=1e-10),
        )
        _, sd = gp.predict_batch(rng.uniform(-3, 3, size=(500, 2)))
        assert np.all(sd >= 0)

    def test_adding_observation_never_increases_sd(self):
        rng = np.random.default_rng(2)
        kernel = KernelConfig(range=1.0, prior_mean=0.0, nugget=1e-4)
        X = rng.uniform(-2, 2, size=(8, 1))
        y = rng.standard_normal(8)
        grid = rng.uniform(-2, 2, size=(50, 1))
        _, sd_before = fit_gp(design_from_arrays(X, y), kernel).predict_batch(grid)
        X2 = np.vstack([X, [[0.33]]])
        y2 = np.append(y, 1.0)
        _, sd_after = fit_gp(design_from_arrays(X2, y2), kernel).predict_batch(grid)
        assert np.all(sd_after <= sd_before + 1e-12)


# ---------------------------------------------------------------------------
# imprecise GP
# ---------------------------------------------------------------------------


class TestImpreciseGp:
    def _design(self, n=12, seed=4):
        rng = np.random.default_rng(seed)
        X = np.sort(rng.uniform(-4, 4, size=n))[:, None]
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)
        return design_from_arrays(X, y)

    def test_zero_imprecision_collapses_to_precise(self):
        d = self._design()
        kernel = KernelConfig(range=1.0, prior_mean=float(d.psis().mean()), nugget=1e-6)
        igp = fit_imprecise_gp(d, 0.0, kernel)
        grid = np.linspace(-4, 4, 100)[:, None]
        lo, hi = igp.bounds_batch(grid)
        precise, _ = igp.base.predict_batch(grid)
        assert np.allclose(lo, precise, atol=1e-10)
        assert np.allclose(hi, precise, atol=1e-10)

    def test_envelope_ordering_on_grid(self):
        d = self._design()
        kernel = KernelConfig(range=1.0, prior_mean=float(d.psis().mean()), nugget=1e-6)
        igp = fit_imprecise_gp(d, 1.5, kernel)
        grid = np.linspace(-4, 4, 100)[:, None]
        lo, hi = igp.bounds_batch(grid)
        assert np.all(hi >= lo)

    def test_precise_mean_inside_envelope(self):
        d = self._design()
        kernel = KernelConfig(range=0.7, prior_mean=float(d.psis().mean()), nugget=1e-6)
        igp = fit_imprecise_gp(d, 2.0, kernel)
        grid = np.linspace(-4, 4, 100)[:, None]
        lo, hi = igp.bounds_batch(grid)
        precise, _ = igp.base.predict_batch(grid)
        assert np.all(lo <= precise + 1e-12)
        assert np.all(precise <= hi + 1e-12)

    def test_width_shrinks_with_more_data(self):
        rng = np.random.default_rng(123)
        X = rng.uniform(-4, 4, size=(50, 1))
        y = np.cos(X[:, 0]) + 0.05 * rng.standard_normal(50)
        full = design_from_arrays(X, y)
        small = full.prefix(5)
        kernel = KernelConfig(range=1.0, prior_mean=0.0, nugget=1e-4)
        test_point = np.array([[0.5]])
        w_full = fit_imprecise_gp(full, 1.0, kernel).width_batch(test_point)[0]
        w_small = fit_imprecise_gp(small, 1.0, kernel).width_batch(test_point)[0]
        assert w_full <= w_small

    def test_multivariate_rejected(self):
        d = design_from_arrays([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0])
        with pytest.raises(SurrogateError):
            fit_imprecise_gp(d, 1.0, KernelConfig(range=1.0, nugget=1e-6))


# ---------------------------------------------------------------------------
# noise model
# ---------------------------------------------------------------------------


class TestNoiseModel:
    def test_constant_target_gives_floor(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, size=(10, 1))
        d = design_from_arrays(X, np.full(10, 2.5))
        nm = fit_noise_model(d, floor=0.0)
        grid = rng.uniform(-1, 1, size=(50, 1))
        assert np.all(nm.predict_batch(grid) <= 0.0 + 1e-12)
        assert np.all(nm.predict_batch(grid) >= 0.0)

    def test_replicate_sd_recovered_at_anchor(self):
        t0 = np.array([0.0])
        t1 = np.array([2.0])
        # replicate pair at t0 constructed to have sample sd exactly 3.0
        lo, hi = 10.0 - 3.0 / np.sqrt(2), 10.0 + 3.0 / np.sqrt(2)
        assert np.std([lo, hi], ddof=1) == pytest.approx(3.0)
        d = Design(
            [
                Observation(t0, lo),
                Observation(t0, hi),
                Observation(t1, 5.0),
                Observation(t1, 5.2),
            ]
        )
        nm = fit_noise_model(d)
        assert 1.5 <= nm.predict(t0) <= 4.5

    def test_heteroscedastic_ordering_from_residuals(self):
        # noisier region must get the larger estimate (single evaluations,
        # leave-one-out residual proxies)
        wins = 0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            X = rng.uniform(-15, 15, size=(60, 2))
            scale = 30.0 * np.abs(X[:, 0] - 15.0) + 0.3 * np.abs(X[:, 1] - 15.0)
            y = X[:, 0] ** 2 + 2 * X[:, 1] ** 2 + scale * rng.standard_normal(60)
            nm = fit_noise_model(design_from_arrays(X, y))
            if nm.predict(np.array([-15.0, 0.0])) > nm.predict(np.array([15.0, 0.0])):
                wins += 1
        assert wins >= 3

    def test_predictions_clamped_at_floor(self):
        rng = np.random.default_rng(31)
        X = rng.uniform(-2, 2, size=(20, 1))
        y = np.sin(3 * X[:, 0]) + 0.3 * rng.standard_normal(20)
        nm = fit_noise_model(design_from_arrays(X, y), floor=0.05)
        grid = rng.uniform(-2, 2, size=(200, 1))
        assert np.all(nm.predict_batch(grid) >= 0.05)
