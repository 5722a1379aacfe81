"""Sequential optimization loops.

``run_bo`` is the plain surrogate-driven loop; ``run_collaborative`` adds
an intervention gate where a simulated human may replace the proposal.
Policies range from never/always intervening to alignment bands on raw
parameter ratios or attribution ratios, plus a rule learned by a
regression tree from earlier runs.

Random streams are split by purpose (initial design, acquisition
candidates, observation noise, attribution draws, human simulation) so a
collaborative run with the gate disabled replays the plain loop exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionSpec, ModelBundle, minimize_acquisition
from .explain import ShapleyReport, build_report
from .space import Design, Observation, ParamSpace
from .surrogate import (
    KernelConfig,
    SurrogateError,
    estimate_hyperparams,
    fit_gp,
    fit_imprecise_gp,
    fit_noise_model,
)
from .tree import TreeRule

RATIO_EPS = 1e-12
DEFAULT_HUMAN_BUDGET_PER_DIM = 500


class Decision(enum.Enum):
    ACCEPT = "accept"
    OVERRIDE = "override"


@dataclass(frozen=True)
class BoConfig:
    space: ParamSpace
    acquisition: AcquisitionSpec
    n_init: int = 3
    max_iterations: int = 10
    optimizer_budget: int | None = None
    seed: int | None = None
    shapley_k: int = 1000
    attach_reports: bool = False
    background_size: int | None = None

    def __post_init__(self) -> None:
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "n_init": self.n_init,
            "max_iterations": self.max_iterations,
            "optimizer_budget": self.optimizer_budget,
            "seed": self.seed,
            "shapley_k": self.shapley_k,
            "attach_reports": self.attach_reports,
            "background_size": self.background_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoConfig":
        return cls(
            space=ParamSpace.from_dict(d["space"]),
            acquisition=AcquisitionSpec.from_dict(d["acquisition"]),
            n_init=int(d.get("n_init", 3)),
            max_iterations=int(d.get("max_iterations", 10)),
            optimizer_budget=d.get("optimizer_budget"),
            seed=d.get("seed"),
            shapley_k=int(d.get("shapley_k", 1000)),
            attach_reports=bool(d.get("attach_reports", False)),
            background_size=d.get("background_size"),
        )


@dataclass(frozen=True)
class HumanModel:
    """Inner optimizer standing in for a person: its own exploration weight
    and a prior-knowledge design drawn from a subregion of the space."""

    lambda_h: float = 200.0
    prior_size: int = 90
    prior_space: ParamSpace | None = None
    share_history: bool = True
    optimizer_budget: int | None = None

    def to_dict(self) -> dict:
        return {
            "lambda_h": self.lambda_h,
            "prior_size": self.prior_size,
            "prior_space": self.prior_space.to_dict() if self.prior_space else None,
            "share_history": self.share_history,
            "optimizer_budget": self.optimizer_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HumanModel":
        prior = d.get("prior_space")
        return cls(
            lambda_h=float(d.get("lambda_h", 200.0)),
            prior_size=int(d.get("prior_size", 90)),
            prior_space=ParamSpace.from_dict(prior) if prior else None,
            share_history=bool(d.get("share_history", True)),
            optimizer_budget=d.get("optimizer_budget"),
        )


@dataclass(frozen=True)
class InterventionPolicy:
    """One of the gate rules deciding whether the human's point replaces
    the optimizer's proposal."""

    variant: str  # never | always | param_ratio | every_k | shap_ratio | tree_rule
    beta: float = 2.0
    k: int = 2
    tree: TreeRule | None = None

    VARIANTS = ("never", "always", "param_ratio", "every_k", "shap_ratio", "tree_rule")

    def __post_init__(self) -> None:
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.variant in ("param_ratio", "shap_ratio") and self.beta <= 1:
            raise ValueError("beta must exceed 1")
        if self.variant == "every_k" and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.variant == "tree_rule" and self.tree is None:
            raise ValueError("tree_rule policy needs a fitted tree")

    @property
    def needs_report(self) -> bool:
        return self.variant in ("shap_ratio", "tree_rule")

    @property
    def needs_human(self) -> bool:
        return self.variant != "never"

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.variant in ("param_ratio", "shap_ratio"):
            d["beta"] = self.beta
        if self.variant == "every_k":
            d["k"] = self.k
        if self.variant == "tree_rule":
            d["tree"] = self.tree.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionPolicy":
        tree = d.get("tree")
        return cls(
            variant=d["variant"],
            beta=float(d.get("beta", 2.0)),
            k=int(d.get("k", 2)),
            tree=TreeRule.from_dict(tree) if tree else None,
        )


@dataclass(frozen=True)
class HumanStats:
    """Running reference values for the alignment-band policies."""

    iteration: int
    param_ratio_avg: float | None = None
    shap_ratio_avg: float | None = None


@dataclass
class IterationRecord:
    t: int
    proposal: np.ndarray
    kernel: KernelConfig
    decision: Decision
    theta_evaluated: np.ndarray
    psi: float
    incumbent_theta: np.ndarray
    incumbent_psi: float
    theta_human: np.ndarray | None = None
    report: ShapleyReport | None = None


@dataclass
class RunTrace:
    space: ParamSpace
    acquisition: AcquisitionSpec
    n_init: int
    seed: int | None
    initial_design: Design
    iterations: list[IterationRecord] = field(default_factory=list)

    def design_prefix(self, t: int) -> Design:
        """All observations visible when iteration t's proposal was made."""
        d = self.initial_design.copy()
        for rec in self.iterations[: t - 1]:
            d.append(Observation(rec.theta_evaluated, rec.psi))
        return d

    def full_design(self) -> Design:
        return self.design_prefix(len(self.iterations) + 1)

    @property
    def incumbent(self) -> Observation:
        return self.full_design().best()

    def incumbent_path(self) -> np.ndarray:
        """Best observed value after each iteration (index 0 = after init)."""
        best = min(o.psi for o in self.initial_design)
        path = [best]
        for rec in self.iterations:
            best = min(best, rec.psi)
            path.append(best)
        return np.asarray(path)


def safe_ratio(num: float, den: float) -> float:
    """num / den with near-zero denominators mapped to +inf."""
    if abs(den) < RATIO_EPS:
        return math.inf
    return num / den


def _in_band(quotient: float, beta: float) -> bool:
    if not math.isfinite(quotient):
        return False
    return 1.0 / beta < quotient < beta


def report_tree_features(report: ShapleyReport) -> np.ndarray:
    """Feature vector the learned rule consumes: mean block then sd block."""
    return np.concatenate([report.components["m"], report.components["se"]])


def tree_feature_names(space: ParamSpace) -> tuple[str, ...]:
    return tuple(f"phi_m[{n}]" for n in space.names) + tuple(f"phi_se[{n}]" for n in space.names)


def decide_intervention(
    policy: InterventionPolicy,
    proposal: np.ndarray,
    report: ShapleyReport | None,
    human_stats: HumanStats,
) -> Decision:
    """Pure gate: does the human's point replace this proposal?"""
    if policy.variant == "never":
        return Decision.ACCEPT
    if policy.variant == "always":
        return Decision.OVERRIDE
    if policy.variant == "every_k":
        return Decision.OVERRIDE if human_stats.iteration % policy.k == 0 else Decision.ACCEPT
    if policy.variant == "param_ratio":
        if human_stats.param_ratio_avg is None:
            raise ValueError("param_ratio policy needs the human's average parameter ratio")
        ratio = safe_ratio(float(proposal[0]), float(proposal[1]))
        quotient = safe_ratio(ratio, human_stats.param_ratio_avg)
        return Decision.ACCEPT if _in_band(quotient, policy.beta) else Decision.OVERRIDE
    if policy.variant == "shap_ratio":
        if report is None:
            raise ValueError("shap_ratio policy needs an attribution report")
        if human_stats.shap_ratio_avg is None:
            raise ValueError("shap_ratio policy needs the human's average attribution ratio")
        phi_m = report.components["m"]
        ratio = safe_ratio(float(phi_m[0]), float(phi_m[1]))
        quotient = safe_ratio(ratio, human_stats.shap_ratio_avg)
        return Decision.ACCEPT if _in_band(quotient, policy.beta) else Decision.OVERRIDE
    assert policy.variant == "tree_rule" and policy.tree is not None
    if report is None:
        raise ValueError("tree_rule policy needs an attribution report")
    return Decision.OVERRIDE if policy.tree.fires(report_tree_features(report)) else Decision.ACCEPT


# ---------------------------------------------------------------------------
# Model fitting shared by the loops and by trace replay
# ---------------------------------------------------------------------------


def fit_models(design: Design, spec: AcquisitionSpec, kernel: KernelConfig) -> ModelBundle:
    gp = fit_gp(design, kernel)
    noise = fit_noise_model(design) if spec.kind in ("racb", "uacb") else None
    igp = fit_imprecise_gp(design, spec.imprecision, kernel) if spec.kind == "uacb" else None
    return ModelBundle(gp=gp, noise=noise, igp=igp)


def robust_hyperparams(design: Design, space: ParamSpace) -> KernelConfig:
    """Empirical Bayes, with a fixed fallback for designs too small or
    degenerate to identify a range (for example a single initial point)."""
    try:
        return estimate_hyperparams(design, space)
    except SurrogateError:
        psis = design.psis()
        var = float(np.var(psis))
        return KernelConfig(
            range=0.3 * space.diameter,
            prior_mean=float(psis.mean()),
            nugget=1e-6 * var + 1e-12,
            amplitude=var if var > 0 else 1.0,
        )


def rebuild_models(trace: RunTrace, t: int, spec: AcquisitionSpec | None = None) -> ModelBundle:
    """Refit iteration t's models from the design prefix and recorded kernel."""
    spec = spec or trace.acquisition
    rec = trace.iterations[t - 1]
    return fit_models(trace.design_prefix(t), spec, rec.kernel)


def _streams(config: BoConfig, rng) -> list[np.random.Generator]:
    """Purpose-split child generators; identical prefixes across loop kinds."""
    root = np.random.default_rng(config.seed if rng is None else rng)
    return root.spawn(6)  # design, acquisition, noise, shapley, human-design, human-acq


def _initial_design(config: BoConfig, target, rng_design, rng_noise) -> Design:
    thetas = config.space.sample_uniform(config.n_init, rng_design)
    return Design(Observation(t, target(t, rng_noise)) for t in thetas)


# ---------------------------------------------------------------------------
# Plain loop
# ---------------------------------------------------------------------------


def run_bo(config: BoConfig, target, rng=None) -> RunTrace:
    """Surrogate-driven minimization; hyperparameters re-estimated every
    iteration; the incumbent is the best observed value."""
    rng_design, rng_acq, rng_noise, rng_shap, _, _ = _streams(config, rng)
    design = _initial_design(config, target, rng_design, rng_noise)
    trace = RunTrace(
        space=config.space,
        acquisition=config.acquisition,
        n_init=config.n_init,
        seed=config.seed,
        initial_design=design.copy(),
    )
    for t in range(1, config.max_iterations + 1):
        try:
            kernel = robust_hyperparams(design, config.space)
            models = fit_models(design, config.acquisition, kernel)
            proposal = minimize_acquisition(
                config.acquisition, models, config.space, config.optimizer_budget, rng_acq
            )
            report = None
            if config.attach_reports:
                report = build_report(
                    models,
                    proposal,
                    config.acquisition,
                    config.space,
                    config.shapley_k,
                    rng_shap.spawn(1)[0],
                    iteration=t,
                    background_size=config.background_size,
                )
            psi = float(target(proposal, rng_noise))
        except Exception as exc:
            raise RuntimeError(f"iteration {t} failed: {exc}") from exc
        design.append(Observation(proposal, psi))
        best = design.best()
        trace.iterations.append(
            IterationRecord(
                t=t,
                proposal=proposal,
                kernel=kernel,
                decision=Decision.ACCEPT,
                theta_evaluated=proposal,
                psi=psi,
                incumbent_theta=best.theta,
                incumbent_psi=best.psi,
                report=report,
            )
        )
    return trace


# ---------------------------------------------------------------------------
# Simulated human
# ---------------------------------------------------------------------------


class HumanSimulator:
    """Stateful wrapper around the inner optimizer modeling a person.

    Holds the prior-knowledge design, proposes one point per call, and
    tracks the reference ratios the alignment policies compare against.
    """

    def __init__(
        self,
        human: HumanModel,
        space: ParamSpace,
        target,
        rng_design: np.random.Generator,
        rng_acq: np.random.Generator,
        shapley_k: int = 1000,
        background_size: int | None = None,
    ) -> None:
        self.model = human
        self.space = space
        self._rng_acq = rng_acq
        self._shapley_k = shapley_k
        self._background_size = background_size
        self.spec = AcquisitionSpec(kind="cb", lam=human.lambda_h)
        prior_space = human.prior_space or space
        thetas = prior_space.sample_uniform(human.prior_size, rng_design)
        self.prior_design = Design(Observation(t, target(t, rng_design)) for t in thetas)
        self.param_ratios: list[float] = []
        self.shap_ratios: list[float] = []
        self.proposals: list[np.ndarray] = []

    def propose(self, shared_history: Design, compute_shap_ratio: bool = False) -> np.ndarray:
        design = self.prior_design.copy()
        if self.model.share_history:
            design.extend(shared_history)
        kernel = robust_hyperparams(design, self.space)
        models = fit_models(design, self.spec, kernel)
        budget = self.model.optimizer_budget or DEFAULT_HUMAN_BUDGET_PER_DIM * self.space.dim
        theta = minimize_acquisition(self.spec, models, self.space, budget, self._rng_acq)
        self.proposals.append(theta)
        if self.space.dim >= 2:
            self.param_ratios.append(safe_ratio(float(theta[0]), float(theta[1])))
        if compute_shap_ratio and self.space.dim >= 2:
            report = build_report(
                models,
                theta,
                self.spec,
                self.space,
                self._shapley_k,
                self._rng_acq.spawn(1)[0],
                iteration=len(self.proposals),
                background_size=self._background_size,
            )
            phi_m = report.components["m"]
            self.shap_ratios.append(safe_ratio(float(phi_m[0]), float(phi_m[1])))
        return theta

    def stats(self, iteration: int) -> HumanStats:
        def finite_mean(vals: list[float]) -> float | None:
            if not vals:
                return None
            arr = np.asarray(vals)
            return float(arr.mean()) if np.all(np.isfinite(arr)) else math.inf

        return HumanStats(
            iteration=iteration,
            param_ratio_avg=finite_mean(self.param_ratios),
            shap_ratio_avg=finite_mean(self.shap_ratios),
        )


def simulate_human(
    human: HumanModel,
    shared_history: Design,
    space: ParamSpace,
    target,
    rng=None,
) -> np.ndarray:
    """One stand-alone proposal from the inner optimizer."""
    root = np.random.default_rng(rng)
    rng_design, rng_acq = root.spawn(2)
    sim = HumanSimulator(human, space, target, rng_design, rng_acq)
    return sim.propose(shared_history)


# ---------------------------------------------------------------------------
# Collaborative loop
# ---------------------------------------------------------------------------


def run_collaborative(
    config: BoConfig,
    target,
    policy: InterventionPolicy,
    human: HumanModel | None = None,
    rng=None,
) -> RunTrace:
    """Plain loop plus the intervention gate at the propose step."""
    if policy.needs_human and human is None:
        raise ValueError(f"policy {policy.variant!r} needs a human model")
    rng_design, rng_acq, rng_noise, rng_shap, rng_hdesign, rng_hacq = _streams(config, rng)
    design = _initial_design(config, target, rng_design, rng_noise)
    trace = RunTrace(
        space=config.space,
        acquisition=config.acquisition,
        n_init=config.n_init,
        seed=config.seed,
        initial_design=design.copy(),
    )
    sim = None
    if policy.needs_human:
        sim = HumanSimulator(
            human,
            config.space,
            target,
            rng_hdesign,
            rng_hacq,
            shapley_k=config.shapley_k,
            background_size=config.background_size,
        )

    for t in range(1, config.max_iterations + 1):
        try:
            kernel = robust_hyperparams(design, config.space)
            models = fit_models(design, config.acquisition, kernel)
            proposal = minimize_acquisition(
                config.acquisition, models, config.space, config.optimizer_budget, rng_acq
            )
            report = None
            if policy.needs_report or config.attach_reports:
                report = build_report(
                    models,
                    proposal,
                    config.acquisition,
                    config.space,
                    config.shapley_k,
                    rng_shap.spawn(1)[0],
                    iteration=t,
                    background_size=config.background_size,
                )
            theta_human = None
            if sim is not None:
                theta_human = sim.propose(design, compute_shap_ratio=policy.variant == "shap_ratio")
            decision = decide_intervention(
                policy, proposal, report, sim.stats(t) if sim else HumanStats(iteration=t)
            )
            theta_eval = theta_human if decision is Decision.OVERRIDE else proposal
            psi = float(target(theta_eval, rng_noise))
        except Exception as exc:
            raise RuntimeError(f"iteration {t} failed: {exc}") from exc
        design.append(Observation(theta_eval, psi))
        best = design.best()
        trace.iterations.append(
            IterationRecord(
                t=t,
                proposal=proposal,
                kernel=kernel,
                decision=decision,
                theta_evaluated=theta_eval,
                psi=psi,
                incumbent_theta=best.theta,
                incumbent_psi=best.psi,
                theta_human=theta_human,
                report=report,
            )
        )
    return trace
