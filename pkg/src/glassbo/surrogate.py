"""Gaussian-process surrogates.

Three flavours live here:

* the precise GP with a squared-exponential kernel of unit amplitude,
  ``k(x, x') = exp(-0.5 * (||x - x'|| / range)**2)``, a constant prior
  mean and a nugget on the diagonal;
* an imprecise variant whose prior mean ranges over an interval, giving
  pointwise upper/lower posterior-mean envelopes (univariate only);
* a noise model: an inner GP over theta fit to local noise-scale
  targets, clamped at a nonnegative floor.

Hyperparameters come from a deterministic empirical-Bayes grid search so
repeat fits are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .space import Design, Observation, ParamSpace

HYPERGRID_SIZE = 32
RANGE_GRID_LO = 1e-2  # of the box diameter
NUGGET_REL_DEFAULT = 1e-6  # times var(psi), plus a tiny absolute jitter
NUGGET_ABS_JITTER = 1e-12
# relative nugget grid for empirical Bayes without replicates; the smallest
# entry is the near-interpolating default and wins on clean data
NUGGET_GRID_FRACTIONS = (1e-6, 1e-4, 1e-3, 1e-2, 0.03, 0.1, 0.3, 1.0)


class SurrogateError(RuntimeError):
    """Raised when a fit is impossible (degenerate design, failed factorization)."""


@dataclass(frozen=True)
class KernelConfig:
    """Squared-exponential kernel hyperparameters with a constant prior mean.

    The squared-exponential part is a correlation function; ``amplitude``
    is the process variance scaling it (profiled to the sample variance
    under empirical Bayes), and ``nugget`` is the observation-noise
    variance, both in target units.
    """

    range: float
    prior_mean: float = 0.0
    nugget: float = 0.0
    amplitude: float = 1.0
    mode: str = "fixed"  # "fixed" | "empirical-bayes"

    def __post_init__(self) -> None:
        if self.range <= 0:
            raise ValueError("kernel range must be positive")
        if self.nugget < 0:
            raise ValueError("nugget must be nonnegative")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.mode not in ("fixed", "empirical-bayes"):
            raise ValueError("mode must be 'fixed' or 'empirical-bayes'")

    @property
    def prior_sd(self) -> float:
        return math.sqrt(self.amplitude)

    def to_dict(self) -> dict:
        return {
            "range": self.range,
            "prior_mean": self.prior_mean,
            "nugget": self.nugget,
            "amplitude": self.amplitude,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        return cls(
            range=d["range"],
            prior_mean=d["prior_mean"],
            nugget=d["nugget"],
            amplitude=d.get("amplitude", 1.0),
            mode=d.get("mode", "fixed"),
        )


def _correlation(a: np.ndarray, b: np.ndarray, range_: float) -> np.ndarray:
    return np.exp(-0.5 * cdist(a, b, "sqeuclidean") / range_**2)


def _kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: KernelConfig) -> np.ndarray:
    return kernel.amplitude * _correlation(a, b, kernel.range)


def _factorize(X: np.ndarray, kernel: KernelConfig) -> np.ndarray:
    K = _kernel_matrix(X, X, kernel)
    K[np.diag_indices_from(K)] += kernel.nugget
    try:
        return cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SurrogateError(
            "covariance factorization failed (duplicated inputs with zero nugget?); "
            "add a small nugget jitter"
        ) from exc


@dataclass(frozen=True)
class GpPosterior:
    """Fitted GP with cached Cholesky factor for O(n) mean / O(n^2) sd queries."""

    design: Design
    kernel: KernelConfig
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    # cached solves reused by the imprecise envelope and LOO residuals
    _ones_solve: np.ndarray = field(repr=False)
    _y_solve: np.ndarray = field(repr=False)
    _X: np.ndarray = field(repr=False)

    def predict_batch(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and sd at each row of thetas, shape (n, p)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self._X.shape[1]:
            raise ValueError(f"expected dimension {self._X.shape[1]}, got {thetas.shape[1]}")
        Ks = _kernel_matrix(thetas, self._X, self.kernel)
        mean = self.kernel.prior_mean + Ks @ self.weights
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = self.kernel.amplitude - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        return mean, np.sqrt(var)

    def predict(self, theta: np.ndarray) -> tuple[float, float]:
        mean, sd = self.predict_batch(np.asarray(theta, dtype=float)[None, :])
        return float(mean[0]), float(sd[0])

    def mean_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        Ks = _kernel_matrix(thetas, self._X, self.kernel)
        return self.kernel.prior_mean + Ks @ self.weights

    def loo_residuals(self) -> np.ndarray:
        """Leave-one-out residuals y_i - mean_{-i}(x_i), from the cached factor."""
        n = self._X.shape[0]
        linv = solve_triangular(self.chol, np.eye(n), lower=True)
        kinv_diag = np.einsum("ij,ij->j", linv, linv)
        return self.weights / kinv_diag


def fit_gp(design: Design, kernel: KernelConfig) -> GpPosterior:
    """Fit the GP posterior; factorization is cached on the returned object."""
    if len(design) == 0:
        raise SurrogateError("cannot fit a GP to an empty design")
    X = design.thetas()
    y = design.psis()
    L = _factorize(X, kernel)
    centered = y - kernel.prior_mean
    weights = cho_solve((L, True), centered)
    ones_solve = cho_solve((L, True), np.ones_like(y))
    y_solve = cho_solve((L, True), y)
    return GpPosterior(
        design=design.copy(),
        kernel=kernel,
        chol=L,
        weights=weights,
        _ones_solve=ones_solve,
        _y_solve=y_solve,
        _X=X,
    )


def predict(gp: GpPosterior, theta: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, sd) at a single point."""
    return gp.predict(theta)


def log_marginal_likelihood(design: Design, kernel: KernelConfig) -> float:
    X = design.thetas()
    y = design.psis() - kernel.prior_mean
    L = _factorize(X, kernel)
    alpha = cho_solve((L, True), y)
    n = y.size
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))


def default_nugget(psis: np.ndarray) -> float:
    return NUGGET_REL_DEFAULT * float(np.var(psis)) + NUGGET_ABS_JITTER


def pooled_replicate_variance(design: Design) -> float | None:
    groups = design.replicate_groups()
    if not groups:
        return None
    ss = 0.0
    dof = 0
    for _, vals in groups:
        ss += float(np.sum((vals - vals.mean()) ** 2))
        dof += vals.size - 1
    return ss / dof if dof > 0 else None


def estimate_hyperparams(design: Design, space: ParamSpace | None = None) -> KernelConfig:
    """Empirical-Bayes hyperparameters on a deterministic log-spaced grid.

    The range grid spans [0.01*diam, diam] where diam is the Euclidean
    diameter of the box (of the design's bounding box when no space is
    given). The prior mean is the sample mean of psi. The nugget is the
    pooled replicate variance when replicates exist; otherwise it is
    searched jointly with the range over a relative grid whose smallest
    entry is the near-interpolating default, so clean targets stay
    uninflated while noisy single-evaluation traces get likelihood-backed
    smoothing.
    """
    if len(design) < 2:
        raise SurrogateError("need at least two observations to estimate hyperparameters")
    X = design.thetas()
    y = design.psis()
    if np.allclose(X, X[0], atol=0.0):
        raise SurrogateError("all inputs identical: kernel range is non-identifiable")
    if space is not None:
        diam = space.diameter
    else:
        diam = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    if diam <= 0:
        raise SurrogateError("degenerate design extent: kernel range is non-identifiable")

    prior_mean = float(y.mean())
    amplitude = float(np.var(y))
    if amplitude <= 0:
        amplitude = 1.0  # constant target: any scale is admissible
    rep_var = pooled_replicate_variance(design)
    if rep_var is not None and rep_var > 0:
        nuggets: tuple[float, ...] = (rep_var,)
    else:
        nuggets = tuple(f * amplitude + NUGGET_ABS_JITTER for f in NUGGET_GRID_FRACTIONS)

    grid = np.geomspace(RANGE_GRID_LO * diam, diam, HYPERGRID_SIZE)
    best: KernelConfig | None = None
    best_lml = -np.inf
    for nugget in nuggets:
        for r in grid:
            cand = KernelConfig(
                range=float(r), prior_mean=prior_mean, nugget=nugget, amplitude=amplitude, mode="empirical-bayes"
            )
            try:
                lml = log_marginal_likelihood(design, cand)
            except SurrogateError:
                continue
            if lml > best_lml:
                best, best_lml = cand, lml
    if best is None:
        raise SurrogateError("no admissible kernel hyperparameters on the grid")
    return best


# ---------------------------------------------------------------------------
# Imprecise GP: prior mean swept over an interval
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImpreciseGpPosterior:
    """Envelope of GP posteriors over a prior-mean interval (univariate only).

    The posterior mean is affine in the prior mean, so the pointwise
    envelope is attained at the interval endpoints.
    """

    base: GpPosterior
    imprecision: float
    mean_lo: float
    mean_hi: float

    def _affine(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (a, b) with posterior_mean(theta; m0) = b + a * m0."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        Ks = _kernel_matrix(thetas, self.base._X, self.base.kernel)
        a = 1.0 - Ks @ self.base._ones_solve
        b = Ks @ self.base._y_solve
        return a, b

    def bounds_batch(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(lower_mean, upper_mean) rows for each theta row."""
        a, b = self._affine(thetas)
        lo = b + np.minimum(a * self.mean_lo, a * self.mean_hi)
        hi = b + np.maximum(a * self.mean_lo, a * self.mean_hi)
        return lo, hi

    def width_batch(self, thetas: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds_batch(thetas)
        return hi - lo

    def lower_mean(self, theta: np.ndarray) -> float:
        return float(self.bounds_batch(np.asarray(theta, float)[None, :])[0][0])

    def upper_mean(self, theta: np.ndarray) -> float:
        return float(self.bounds_batch(np.asarray(theta, float)[None, :])[1][0])

    def width(self, theta: np.ndarray) -> float:
        return self.upper_mean(theta) - self.lower_mean(theta)


def fit_imprecise_gp(design: Design, c: float, kernel: KernelConfig) -> ImpreciseGpPosterior:
    """Imprecise GP with prior-mean interval center ± c * sd(psi)."""
    if len(design) == 0:
        raise SurrogateError("cannot fit an imprecise GP to an empty design")
    if design.dim != 1:
        raise SurrogateError("imprecise GPs are univariate only")
    if c < 0:
        raise ValueError("imprecision degree c must be nonnegative")
    base = fit_gp(design, kernel)
    spread = float(np.std(design.psis(), ddof=0))
    return ImpreciseGpPosterior(
        base=base,
        imprecision=float(c),
        mean_lo=kernel.prior_mean - c * spread,
        mean_hi=kernel.prior_mean + c * spread,
    )


# ---------------------------------------------------------------------------
# Noise model: inner GP over local noise-scale targets
# ---------------------------------------------------------------------------

# E|N(0, s^2)| = s * sqrt(2/pi); absolute residuals are rescaled accordingly
_HALF_NORMAL_SCALE = math.sqrt(math.pi / 2.0)
_ROLLING_WINDOW = 3
# sampling variance of log|N(0, 1)|: the known log-scale observation noise
# of a single absolute residual
_LOG_ABS_NORMAL_VAR = math.pi**2 / 8.0


@dataclass(frozen=True)
class NoiseModel:
    """Nonnegative estimate of the local noise scale.

    The inner GP regresses log noise-scale targets (scales are positive
    and their sampling noise is near-constant on the log scale), so the
    prediction is the exponentiated posterior mean, clamped at the floor.
    """

    inner: GpPosterior
    shift: float
    floor: float = 0.0

    def predict_batch(self, thetas: np.ndarray) -> np.ndarray:
        est = np.exp(self.inner.mean_batch(thetas)) - self.shift
        return np.maximum(est, self.floor)

    def predict(self, theta: np.ndarray) -> float:
        return float(self.predict_batch(np.asarray(theta, float)[None, :])[0])


def _rolling_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Centered rolling mean with shrinking edges."""
    n = values.size
    out = np.empty(n)
    half = window // 2
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


def fit_noise_model(design: Design, floor: float = 0.0) -> NoiseModel:
    """Fit the noise-scale model.

    Targets are replicate standard deviations where the design repeats
    inputs; otherwise rolling absolute leave-one-out residuals of a
    preliminary GP fit, rescaled from half-normal absolute values to a
    standard-deviation proxy. The inner GP is fit to the log targets
    with the matching known log-scale sampling variance as its nugget.
    """
    if len(design) == 0:
        raise SurrogateError("cannot fit a noise model to an empty design")
    if floor < 0:
        raise ValueError("floor must be nonnegative")

    groups = design.replicate_groups()
    if groups:
        anchors = np.array([g[0] for g in groups])
        targets = np.array([float(np.std(vals, ddof=1)) for _, vals in groups])
        # var(log s_hat) ~ 1 / (2 (n_g - 1)) for a replicate sd
        dofs = np.array([vals.size - 1 for _, vals in groups], dtype=float)
        log_noise = float(np.mean(1.0 / (2.0 * dofs)))
    else:
        kernel = estimate_hyperparams(design)
        prelim = fit_gp(design, kernel)
        abs_resid = np.abs(prelim.loo_residuals())
        targets = _HALF_NORMAL_SCALE * _rolling_mean(abs_resid, _ROLLING_WINDOW)
        anchors = design.thetas()
        log_noise = _LOG_ABS_NORMAL_VAR / _ROLLING_WINDOW

    shift = 1e-8 + 1e-6 * float(targets.max(initial=0.0))
    log_targets = np.log(targets + shift)
    noise_design = Design(
        Observation(np.asarray(theta, float), float(t)) for theta, t in zip(anchors, log_targets)
    )
    if len(noise_design) >= 2 and not np.allclose(anchors, anchors[0], atol=0.0):
        inner_kernel = _estimate_noise_hyperparams(noise_design, log_noise)
    else:
        # single anchor: any positive range interpolates it
        inner_kernel = KernelConfig(
            range=1.0,
            prior_mean=float(log_targets.mean()),
            nugget=NUGGET_ABS_JITTER,
        )
    inner = fit_gp(noise_design, inner_kernel)
    return NoiseModel(inner=inner, shift=shift, floor=float(floor))


def _estimate_noise_hyperparams(noise_design: Design, log_noise: float) -> KernelConfig:
    """Range grid for the inner log-scale noise GP under a known nugget."""
    X = noise_design.thetas()
    y = noise_design.psis()
    diam = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    prior_mean = float(y.mean())
    total_var = float(np.var(y))
    nugget = log_noise + NUGGET_ABS_JITTER
    # signal variance: what the sampling noise leaves unexplained
    amplitude = max(total_var - log_noise, 0.05 * total_var, 1e-12)
    grid = np.geomspace(RANGE_GRID_LO * diam, diam, HYPERGRID_SIZE)
    best: KernelConfig | None = None
    best_lml = -np.inf
    for r in grid:
        cand = KernelConfig(
            range=float(r), prior_mean=prior_mean, nugget=nugget, amplitude=amplitude, mode="empirical-bayes"
        )
        try:
            lml = log_marginal_likelihood(noise_design, cand)
        except SurrogateError:
            continue
        if lml > best_lml:
            best, best_lml = cand, lml
    if best is None:
        raise SurrogateError("no admissible noise-model hyperparameters on the grid")
    return best
