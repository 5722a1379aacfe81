"""Batch experiment runner and summary statistics.

A batch crosses a roster of agents (intervention policies plus their
human models) with repetitions on one benchmark target. Per-cell seeds
derive from the master seed and the cell coordinates, outputs are
written atomically, and every aggregate is a pure fold over the
persisted traces.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionSpec
from .benchmarks import Target, TargetSpec, make_target
from .events import write_trace
from .loop import BoConfig, HumanModel, InterventionPolicy, RunTrace, run_collaborative

Z_95 = 1.96


@dataclass(frozen=True)
class AgentSpec:
    name: str
    policy: InterventionPolicy
    human: HumanModel | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy.to_dict(),
            "human": self.human.to_dict() if self.human else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentSpec":
        human = d.get("human")
        return cls(
            name=d["name"],
            policy=InterventionPolicy.from_dict(d["policy"]),
            human=HumanModel.from_dict(human) if human else None,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    target: TargetSpec
    agents: tuple[AgentSpec, ...]
    repetitions: int = 40
    iterations: int = 10
    n_init: int = 3
    acquisition: AcquisitionSpec = AcquisitionSpec(kind="cb", lam=20.0)
    shapley_k: int = 1000
    background_size: int | None = None
    optimizer_budget: int | None = None
    seed: int = 0
    outdir: str = "batch-out"
    # placement of the human's prior-knowledge region: side fraction of a
    # box centered on the target optimum (None keeps the full space)
    human_prior_fraction: float | None = 0.5
    workers: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.agents:
            raise ValueError("need at least one agent")

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "repetitions": self.repetitions,
            "iterations": self.iterations,
            "n_init": self.n_init,
            "acquisition": self.acquisition.to_dict(),
            "shapley_k": self.shapley_k,
            "background_size": self.background_size,
            "optimizer_budget": self.optimizer_budget,
            "seed": self.seed,
            "outdir": self.outdir,
            "human_prior_fraction": self.human_prior_fraction,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(
            target=TargetSpec.from_dict(d["target"]),
            agents=tuple(AgentSpec.from_dict(a) for a in d["agents"]),
            repetitions=int(d.get("repetitions", 40)),
            iterations=int(d.get("iterations", 10)),
            n_init=int(d.get("n_init", 3)),
            acquisition=AcquisitionSpec.from_dict(d.get("acquisition", {"kind": "cb", "lambda": 20.0})),
            shapley_k=int(d.get("shapley_k", 1000)),
            background_size=d.get("background_size"),
            optimizer_budget=d.get("optimizer_budget"),
            seed=int(d.get("seed", 0)),
            outdir=d.get("outdir", "batch-out"),
            human_prior_fraction=d.get("human_prior_fraction", 0.5),
            workers=int(d.get("workers", 1)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_agents() -> tuple[AgentSpec, ...]:
    """The standard roster: plain optimizer, human alone, and the three
    intervention-gated teams."""
    human = HumanModel()
    return (
        AgentSpec("A0", InterventionPolicy("never")),
        AgentSpec("A1", InterventionPolicy("always"), human),
        AgentSpec("A2", InterventionPolicy("param_ratio", beta=2.0), human),
        AgentSpec("A3", InterventionPolicy("every_k", k=2), human),
        AgentSpec("A4", InterventionPolicy("shap_ratio", beta=2.0), human),
    )


@dataclass
class RegretCurve:
    simple: np.ndarray  # per-iteration incumbent minus optimum
    cumulative: float


def regret_curve(trace: RunTrace, optimum: float) -> RegretCurve:
    """Simple regret after each loop iteration and its sum."""
    path = trace.incumbent_path()[1:]  # drop the post-init point
    simple = path - optimum
    return RegretCurve(simple=simple, cumulative=float(simple.sum()))


@dataclass
class BatchResult:
    config: ExperimentConfig
    traces: dict[str, list[RunTrace]]
    failures: list[tuple[str, int, str]] = field(default_factory=list)

    def incumbent_matrix(self, agent: str) -> np.ndarray:
        """(repetitions, iterations+1) incumbent paths, init point included."""
        return np.stack([t.incumbent_path() for t in self.traces[agent]])

    def incumbent_aggregate(self, agent: str) -> tuple[np.ndarray, np.ndarray]:
        """(mean, 95% CI half-width) per iteration; half-width is NaN for
        a single repetition."""
        m = self.incumbent_matrix(agent)
        mean = m.mean(axis=0)
        if m.shape[0] > 1:
            half = Z_95 * m.std(axis=0, ddof=1) / math.sqrt(m.shape[0])
        else:
            half = np.full(mean.shape, np.nan)
        return mean, half

    def cumulative_regrets(self, agent: str, optimum: float) -> np.ndarray:
        return np.array([regret_curve(t, optimum).cumulative for t in self.traces[agent]])


def cell_rng(master_seed: int, agent_index: int, repetition: int) -> np.random.Generator:
    """Deterministic per-cell generator from (master, agent, repetition)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(agent_index, repetition))
    return np.random.default_rng(ss)


def _resolve_human(agent: AgentSpec, config: ExperimentConfig, target: Target) -> HumanModel | None:
    if agent.human is None:
        return None
    human = agent.human
    if human.prior_space is None and config.human_prior_fraction is not None:
        center = target.optimum_theta
        if center is not None:
            prior = target.space.subbox(center, config.human_prior_fraction)
            human = HumanModel(
                lambda_h=human.lambda_h,
                prior_size=human.prior_size,
                prior_space=prior,
                share_history=human.share_history,
                optimizer_budget=human.optimizer_budget,
            )
    return human


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_batch(config: ExperimentConfig, persist: bool = True) -> BatchResult:
    """Run repetitions x agents, persist traces and aggregates.

    Failures are recorded per cell and the rest of the batch continues.
    """
    target = make_target(config.target)
    outdir = Path(config.outdir)
    result = BatchResult(config=config, traces={a.name: [] for a in config.agents})

    def run_cell(a_idx: int, agent: AgentSpec, rep: int) -> RunTrace:
        bo = BoConfig(
            space=target.space,
            acquisition=config.acquisition,
            n_init=config.n_init,
            max_iterations=config.iterations,
            optimizer_budget=config.optimizer_budget,
            shapley_k=config.shapley_k,
            background_size=config.background_size,
        )
        human = _resolve_human(agent, config, target)
        return run_collaborative(bo, target, agent.policy, human, cell_rng(config.seed, a_idx, rep))

    cells = [(a_idx, agent, rep) for a_idx, agent in enumerate(config.agents) for rep in range(config.repetitions)]
    outcomes: dict[tuple[int, int], RunTrace | Exception] = {}
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futs = {(a_idx, rep): pool.submit(run_cell, a_idx, agent, rep) for a_idx, agent, rep in cells}
        for key, fut in futs.items():
            exc = fut.exception()
            outcomes[key] = exc if exc is not None else fut.result()
    else:
        for a_idx, agent, rep in cells:
            try:
                outcomes[(a_idx, rep)] = run_cell(a_idx, agent, rep)
            except Exception as exc:
                outcomes[(a_idx, rep)] = exc

    for a_idx, agent in enumerate(config.agents):
        for rep in range(config.repetitions):
            out = outcomes[(a_idx, rep)]
            if isinstance(out, Exception):
                result.failures.append((agent.name, rep, str(out)))
                continue
            result.traces[agent.name].append(out)
            if persist:
                trace_path = outdir / agent.name / f"rep_{rep:03d}.jsonl"
                trace_path.parent.mkdir(parents=True, exist_ok=True)
                write_trace(out, trace_path)

    if persist:
        write_aggregates(result, outdir, target)
    return result


def write_aggregates(result: BatchResult, outdir: Path, target: Target) -> None:
    outdir = Path(outdir)
    rows = ["agent,iteration,mean,ci_half"]
    for agent in result.traces:
        if not result.traces[agent]:
            continue
        mean, half = result.incumbent_aggregate(agent)
        for t, (m, h) in enumerate(zip(mean, half)):
            rows.append(f"{agent},{t},{m!r},{h!r}")
    atomic_write_text(outdir / "incumbents.csv", "\n".join(rows) + "\n")

    if target.optimum is not None:
        rows = ["agent,repetition,cumulative_regret"]
        for agent in result.traces:
            for rep, trace in enumerate(result.traces[agent]):
                cum = regret_curve(trace, target.optimum).cumulative
                rows.append(f"{agent},{rep},{cum!r}")
        atomic_write_text(outdir / "regret.csv", "\n".join(rows) + "\n")

    summary = {
        "config": result.config.to_dict(),
        "optimum": target.optimum,
        "failures": [list(f) for f in result.failures],
    }
    atomic_write_text(outdir / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
