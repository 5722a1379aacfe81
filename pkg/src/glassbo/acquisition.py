"""Additive acquisition functions and their box-constrained minimizer.

Three families share one additive shape (everything is minimized):

* ``cb``    mean - lambda * sd
* ``racb``  mean - tau * sd + alpha * noise
* ``uacb``  mean - lambda * sd - rho * mean_envelope_width + alpha * noise

Each evaluation returns a named breakdown whose components sum to the
total, which is what the attribution layer decomposes further.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .space import ParamSpace
from .surrogate import GpPosterior, ImpreciseGpPosterior, NoiseModel

ACQUISITION_KINDS = ("cb", "racb", "uacb")


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition family to use and its nonnegative weights."""

    kind: str = "cb"
    lam: float = 1.0  # exploration weight (cb, uacb)
    tau: float = 1.0  # exploration weight (racb)
    alpha: float = 1.0  # aleatoric-avoidance weight (racb, uacb)
    rho: float = 1.0  # model-uncertainty weight (uacb)
    imprecision: float = 1.0  # prior-mean imprecision degree for uacb's envelope

    def __post_init__(self) -> None:
        if self.kind not in ACQUISITION_KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        for name in ("lam", "tau", "alpha", "rho", "imprecision"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def component_names(self) -> tuple[str, ...]:
        if self.kind == "cb":
            return ("m", "se")
        if self.kind == "racb":
            return ("m", "se", "noise")
        return ("m", "se", "model", "noise")

    def component_weight(self, name: str) -> float:
        """Signed weight folding the component's raw value into the total."""
        if name == "m":
            return 1.0
        if name == "se":
            return -(self.tau if self.kind == "racb" else self.lam)
        if name == "noise":
            return self.alpha
        if name == "model":
            return -self.rho
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("cb", "uacb"):
            d["lambda"] = self.lam
        if self.kind == "racb":
            d["tau"] = self.tau
        if self.kind in ("racb", "uacb"):
            d["alpha"] = self.alpha
        if self.kind == "uacb":
            d["rho"] = self.rho
            d["imprecision"] = self.imprecision
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionSpec":
        return cls(
            kind=d.get("kind", "cb"),
            lam=float(d.get("lambda", d.get("lam", 1.0))),
            tau=float(d.get("tau", 1.0)),
            alpha=float(d.get("alpha", 1.0)),
            rho=float(d.get("rho", 1.0)),
            imprecision=float(d.get("imprecision", 1.0)),
        )


@dataclass(frozen=True)
class AcquisitionBreakdown:
    """Signed named terms whose sum is the acquisition value."""

    components: dict[str, float]

    @property
    def total(self) -> float:
        return float(sum(self.components.values()))


@dataclass(frozen=True)
class ModelBundle:
    """Fitted models an acquisition evaluation may need."""

    gp: GpPosterior
    noise: NoiseModel | None = None
    igp: ImpreciseGpPosterior | None = None


def eval_cb(gp: GpPosterior, theta: np.ndarray, lam: float) -> AcquisitionBreakdown:
    mean, sd = gp.predict(theta)
    return AcquisitionBreakdown({"m": mean, "se": -lam * sd})


def eval_racb(
    gp: GpPosterior, noise_model: NoiseModel, theta: np.ndarray, tau: float, alpha: float
) -> AcquisitionBreakdown:
    mean, sd = gp.predict(theta)
    eps = noise_model.predict(theta)
    return AcquisitionBreakdown({"m": mean, "se": -tau * sd, "noise": alpha * eps})


def eval_uacb(
    gp: GpPosterior,
    igp: ImpreciseGpPosterior,
    noise_model: NoiseModel,
    theta: np.ndarray,
    lam: float,
    rho: float,
    alpha: float,
) -> AcquisitionBreakdown:
    if igp.base._X.shape[1] != 1:
        raise ValueError("uacb requires a univariate space")
    mean, sd = gp.predict(theta)
    eps = noise_model.predict(theta)
    width = igp.width(theta)
    return AcquisitionBreakdown({"m": mean, "se": -lam * sd, "model": -rho * width, "noise": alpha * eps})


def evaluate(spec: AcquisitionSpec, models: ModelBundle, theta: np.ndarray) -> AcquisitionBreakdown:
    if spec.kind == "cb":
        return eval_cb(models.gp, theta, spec.lam)
    if spec.kind == "racb":
        if models.noise is None:
            raise ValueError("racb needs a noise model")
        return eval_racb(models.gp, models.noise, theta, spec.tau, spec.alpha)
    if models.noise is None or models.igp is None:
        raise ValueError("uacb needs a noise model and an imprecise GP")
    return eval_uacb(models.gp, models.igp, models.noise, theta, spec.lam, spec.rho, spec.alpha)


def component_values(spec: AcquisitionSpec, models: ModelBundle, thetas: np.ndarray) -> dict[str, np.ndarray]:
    """Raw (unweighted) component values batched over theta rows."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    mean, sd = models.gp.predict_batch(thetas)
    out = {"m": mean, "se": sd}
    if spec.kind in ("racb", "uacb"):
        assert models.noise is not None
        out["noise"] = models.noise.predict_batch(thetas)
    if spec.kind == "uacb":
        assert models.igp is not None
        out["model"] = models.igp.width_batch(thetas)
    return out


def acquisition_values(spec: AcquisitionSpec, models: ModelBundle, thetas: np.ndarray) -> np.ndarray:
    """Acquisition totals batched over theta rows."""
    raw = component_values(spec, models, thetas)
    total = np.zeros(next(iter(raw.values())).shape)
    for name, vals in raw.items():
        total += spec.component_weight(name) * vals
    return total


# ---------------------------------------------------------------------------
# Inner optimizer: seeded multistart + coordinate descent
# ---------------------------------------------------------------------------

_N_REFINE_STARTS = 5
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 40
_MAX_PASSES = 8


def _golden_section(fn, lo: float, hi: float, iters: int = _GOLDEN_ITERS) -> tuple[float, float]:
    """Derivative-free 1-d minimizer on [lo, hi]; returns (x, fn(x))."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
        if fc < best_f:
            best_x, best_f = c, fc
        if fd < best_f:
            best_x, best_f = d, fd
    # endpoints matter for monotone objectives
    for x in (lo, hi):
        f = fn(x)
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


def minimize_acquisition(
    spec: AcquisitionSpec,
    models: ModelBundle,
    space: ParamSpace,
    budget: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Minimize the acquisition over the box.

    ``budget`` uniform candidates are scored in one batch; the best five
    get coordinate-wise golden-section refinement. The result never
    scores worse than any raw candidate and is deterministic for a fixed
    generator state. Ties break on lexicographic theta.
    """
    if budget is None:
        budget = 1000 * space.dim
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(rng)

    cands = space.sample_uniform(budget, rng)
    vals = acquisition_values(spec, models, cands)
    order = sorted(range(budget), key=lambda i: (vals[i], tuple(cands[i])))
    starts = order[: min(_N_REFINE_STARTS, budget)]

    def point_value(theta: np.ndarray) -> float:
        return float(acquisition_values(spec, models, theta[None, :])[0])

    best_theta = cands[starts[0]].copy()
    best_val = float(vals[starts[0]])
    for idx in starts:
        theta = cands[idx].copy()
        val = float(vals[idx])
        for _ in range(_MAX_PASSES):
            improved = False
            for j in range(space.dim):
                def along(x: float, j=j, theta=theta) -> float:
                    trial = theta.copy()
                    trial[j] = x
                    return point_value(trial)

                x, f = _golden_section(along, float(space.lower[j]), float(space.upper[j]))
                if f < val - 1e-15 * (1.0 + abs(val)):
                    theta[j] = x
                    val = f
                    improved = True
            if not improved:
                break
        if (val, tuple(theta)) < (best_val, tuple(best_theta)):
            best_theta, best_val = theta, val
    return space.clip(best_theta)
