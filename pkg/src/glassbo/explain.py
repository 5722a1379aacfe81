"""Per-iteration attribution reports and cross-restart informativeness paths.

A report decomposes the acquisition value of one proposal into signed
per-parameter contributions, one block per additive acquisition
component, all estimated from a single shared draw stream so the blocks
sum exactly to the total attribution.

Components are stored weight-folded: the stored ``se`` block is already
``-lambda * phi(sd)`` (or ``-tau * phi(sd)``), ``noise`` is
``+alpha * phi(eps)`` and ``model`` is ``-rho * phi(width)``, so that the
per-parameter row sum equals the acquisition attribution.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .acquisition import AcquisitionSpec, ModelBundle, component_values
from .shapley import (
    AdequacyVerdict,
    AttributionEstimate,
    ShapleyGame,
    check_sample_size,
    estimate_shapley_shared,
)
from .space import ParamSpace

DEFAULT_BACKGROUND_PER_DIM = 1000


@dataclass(frozen=True)
class ShapleyReport:
    """Attribution of one proposal's acquisition value."""

    iteration: int
    explicand: np.ndarray
    kind: str
    components: dict[str, np.ndarray]  # weight-folded phi per parameter
    stderrs: dict[str, np.ndarray]  # folded stderr per parameter
    phi_af: np.ndarray
    phi_af_stderr: np.ndarray
    adequacy: AdequacyVerdict
    K: int
    seed: int | None
    background_size: int

    def row_residuals(self) -> np.ndarray:
        total = np.zeros_like(self.phi_af)
        for vals in self.components.values():
            total = total + vals
        return np.abs(self.phi_af - total)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "explicand": self.explicand.tolist(),
            "kind": self.kind,
            "components": {k: v.tolist() for k, v in self.components.items()},
            "stderrs": {k: v.tolist() for k, v in self.stderrs.items()},
            "phi_af": self.phi_af.tolist(),
            "phi_af_stderr": self.phi_af_stderr.tolist(),
            "adequacy": self.adequacy.to_dict(),
            "K": self.K,
            "seed": self.seed,
            "background_size": self.background_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapleyReport":
        return cls(
            iteration=int(d["iteration"]),
            explicand=np.asarray(d["explicand"], float),
            kind=d["kind"],
            components={k: np.asarray(v, float) for k, v in d["components"].items()},
            stderrs={k: np.asarray(v, float) for k, v in d["stderrs"].items()},
            phi_af=np.asarray(d["phi_af"], float),
            phi_af_stderr=np.asarray(d["phi_af_stderr"], float),
            adequacy=AdequacyVerdict.from_dict(d["adequacy"]),
            K=int(d["K"]),
            seed=d.get("seed"),
            background_size=int(d["background_size"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def report_linearity_check(report: ShapleyReport) -> float:
    """Largest absolute gap between a row's total and its component sum."""
    return float(report.row_residuals().max())


def component_games(
    spec: AcquisitionSpec, models: ModelBundle, explicand: np.ndarray, background: np.ndarray
) -> dict[str, ShapleyGame]:
    """Raw (unweighted) component games plus the combined acquisition game."""

    def raw_fn(name: str):
        return lambda X: component_values(spec, models, X)[name]

    games = {
        name: ShapleyGame(value_fn=raw_fn(name), explicand=explicand, background=background)
        for name in spec.component_names
    }

    def combined(X: np.ndarray) -> np.ndarray:
        raw = component_values(spec, models, X)
        total = np.zeros(next(iter(raw.values())).shape)
        for name, vals in raw.items():
            total += spec.component_weight(name) * vals
        return total

    games[spec.kind] = ShapleyGame(value_fn=combined, explicand=explicand, background=background)
    return games


def build_report(
    models: ModelBundle,
    explicand: np.ndarray,
    spec: AcquisitionSpec,
    space: ParamSpace,
    K: int,
    rng: np.random.Generator | int | None,
    iteration: int = 0,
    background_size: int | None = None,
) -> ShapleyReport:
    """Attribute one proposal under already-fitted models."""
    explicand = np.asarray(explicand, dtype=float)
    seed = rng if isinstance(rng, int) else None
    gen = np.random.default_rng(rng)
    p = space.dim
    n_background = background_size or DEFAULT_BACKGROUND_PER_DIM * p
    background = space.sample_uniform(n_background, gen)

    games = component_games(spec, models, explicand, background)
    raw_games = {name: games[name] for name in spec.component_names}
    estimates, diffs = estimate_shapley_shared(raw_games, K, gen, return_diffs=True)

    components: dict[str, np.ndarray] = {}
    stderrs: dict[str, np.ndarray] = {}
    combined_diffs = np.zeros_like(diffs[spec.component_names[0]])
    for name in spec.component_names:
        w = spec.component_weight(name)
        components[name] = w * estimates[name].phi
        stderrs[name] = abs(w) * estimates[name].stderr
        combined_diffs = combined_diffs + w * diffs[name]

    phi_af = np.zeros(p)
    for vals in components.values():
        phi_af = phi_af + vals
    if K > 1:
        phi_af_stderr = combined_diffs.std(axis=0, ddof=1) / math.sqrt(K)
    else:
        phi_af_stderr = np.zeros(p)

    all_estimates = dict(estimates)
    all_estimates[spec.kind] = AttributionEstimate(
        phi=phi_af, stderr=phi_af_stderr, K=K, seed=seed, background_size=n_background
    )
    adequacy = check_sample_size(all_estimates, games)

    return ShapleyReport(
        iteration=iteration,
        explicand=explicand,
        kind=spec.kind,
        components=components,
        stderrs=stderrs,
        phi_af=phi_af,
        phi_af_stderr=phi_af_stderr,
        adequacy=adequacy,
        K=K,
        seed=seed,
        background_size=n_background,
    )


def explain_iteration(
    trace,
    t: int,
    spec: AcquisitionSpec | None = None,
    K: int = 1000,
    rng: np.random.Generator | int | None = None,
    background_size: int | None = None,
) -> ShapleyReport:
    """Rebuild iteration t's surrogate state from a trace and attribute it.

    The surrogate is refit on the design prefix visible when the proposal
    was made, using the hyperparameters recorded in the trace, so the
    report is reproducible from the persisted trace alone.
    """
    from .loop import rebuild_models  # local import to avoid a cycle

    if t < 1 or t > len(trace.iterations):
        raise IndexError(f"iteration {t} outside 1..{len(trace.iterations)}")
    spec = spec or trace.acquisition
    models = rebuild_models(trace, t, spec)
    explicand = trace.iterations[t - 1].proposal
    return build_report(
        models,
        explicand,
        spec,
        trace.space,
        K,
        rng,
        iteration=t,
        background_size=background_size,
    )


# ---------------------------------------------------------------------------
# Informativeness paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InformativenessPath:
    """Per-iteration, per-parameter contribution means and sds over restarts."""

    components: tuple[str, ...]
    mean: dict[str, np.ndarray]  # component -> (T, p)
    sd: dict[str, np.ndarray]  # component -> (T, p)
    n_restarts: int

    @property
    def n_iterations(self) -> int:
        return next(iter(self.mean.values())).shape[0]

    @property
    def n_params(self) -> int:
        return next(iter(self.mean.values())).shape[1]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "parameter", "component", "mean", "sd"])
            for name in self.components:
                m, s = self.mean[name], self.sd[name]
                for t in range(m.shape[0]):
                    for j in range(m.shape[1]):
                        writer.writerow([t + 1, j + 1, name, repr(m[t, j]), repr(s[t, j])])


def _report_matrix(reports: Sequence[ShapleyReport], component: str) -> np.ndarray:
    return np.array(
        [r.phi_af if component == r.kind else r.components[component] for r in reports]
    )


def informativeness_path(
    traces: Iterable,
    spec: AcquisitionSpec | None = None,
    K: int = 1000,
    rng: np.random.Generator | int | None = None,
    background_size: int | None = None,
) -> InformativenessPath:
    """Aggregate per-iteration contributions across restarts.

    Traces with reports already attached are used as-is; otherwise each
    iteration is explained on the fly with generators spawned from rng in
    trace-then-iteration order.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    T = len(traces[0].iterations)
    p = traces[0].space.dim
    for tr in traces:
        if len(tr.iterations) != T or tr.space.dim != p:
            raise ValueError("all traces must share length and dimension")

    gen = np.random.default_rng(rng)
    per_trace_reports: list[list[ShapleyReport]] = []
    for tr in traces:
        reports = []
        use_spec = spec or tr.acquisition
        for t in range(1, T + 1):
            rec = tr.iterations[t - 1]
            if rec.report is not None and spec is None:
                reports.append(rec.report)
            else:
                child = gen.spawn(1)[0]
                reports.append(
                    explain_iteration(tr, t, use_spec, K, child, background_size=background_size)
                )
        per_trace_reports.append(reports)

    kind = per_trace_reports[0][0].kind
    names = tuple(per_trace_reports[0][0].components.keys()) + (kind,)
    mean: dict[str, np.ndarray] = {}
    sd: dict[str, np.ndarray] = {}
    for name in names:
        stacked = np.stack([_report_matrix(reports, name) for reports in per_trace_reports])
        mean[name] = stacked.mean(axis=0)
        sd[name] = stacked.std(axis=0, ddof=1) if stacked.shape[0] > 1 else np.zeros_like(stacked[0])
    return InformativenessPath(components=names, mean=mean, sd=sd, n_restarts=len(traces))
