"""Append-only event-log form of a run trace.

One JSON object per line, kinds: init, propose, report, decide, observe.
The first init event carries the run configuration so a trace can be
reconstructed from the log alone; replay is a pure fold over the lines.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .acquisition import AcquisitionSpec
from .explain import ShapleyReport
from .loop import Decision, IterationRecord, RunTrace
from .space import Design, Observation, ParamSpace
from .surrogate import KernelConfig

EVENT_KINDS = ("init", "propose", "report", "decide", "observe")


def trace_config_dict(trace: RunTrace) -> dict:
    return {
        "space": trace.space.to_dict(),
        "acquisition": trace.acquisition.to_dict(),
        "n_init": trace.n_init,
        "seed": trace.seed,
    }


def trace_to_events(trace: RunTrace) -> list[dict]:
    events: list[dict] = []
    for i, obs in enumerate(trace.initial_design):
        ev = {"kind": "init", "theta": obs.theta.tolist(), "psi": obs.psi}
        if i == 0:
            ev["config"] = trace_config_dict(trace)
        events.append(ev)
    for rec in trace.iterations:
        events.append(
            {
                "kind": "propose",
                "t": rec.t,
                "theta": rec.proposal.tolist(),
                "kernel": rec.kernel.to_dict(),
            }
        )
        if rec.report is not None:
            events.append({"kind": "report", "t": rec.t, "report": rec.report.to_dict()})
        decide = {"kind": "decide", "t": rec.t, "decision": rec.decision.value}
        if rec.theta_human is not None:
            decide["theta_human"] = rec.theta_human.tolist()
        events.append(decide)
        events.append(
            {
                "kind": "observe",
                "t": rec.t,
                "theta": rec.theta_evaluated.tolist(),
                "psi": rec.psi,
                "incumbent_theta": rec.incumbent_theta.tolist(),
                "incumbent_psi": rec.incumbent_psi,
            }
        )
    return events


def events_to_trace(events: Iterable[dict]) -> RunTrace:
    events = list(events)
    if not events or events[0].get("kind") != "init" or "config" not in events[0]:
        raise ValueError("event log must start with a config-bearing init event")
    cfg = events[0]["config"]
    space = ParamSpace.from_dict(cfg["space"])
    trace = RunTrace(
        space=space,
        acquisition=AcquisitionSpec.from_dict(cfg["acquisition"]),
        n_init=int(cfg["n_init"]),
        seed=cfg.get("seed"),
        initial_design=Design(),
    )
    pending: dict | None = None
    for ev in events:
        kind = ev["kind"]
        if kind == "init":
            if "psi" in ev and ev["psi"] is not None:
                trace.initial_design.append(Observation(np.asarray(ev["theta"], float), ev["psi"]))
        elif kind == "propose":
            pending = {
                "t": int(ev["t"]),
                "proposal": np.asarray(ev["theta"], float),
                "kernel": KernelConfig.from_dict(ev["kernel"]),
                "report": None,
                "decision": None,
                "theta_human": None,
            }
        elif kind == "report":
            if pending is None:
                raise ValueError("report event without a pending proposal")
            pending["report"] = ShapleyReport.from_dict(ev["report"])
        elif kind == "decide":
            if pending is None:
                raise ValueError("decide event without a pending proposal")
            pending["decision"] = Decision(ev["decision"])
            if ev.get("theta_human") is not None:
                pending["theta_human"] = np.asarray(ev["theta_human"], float)
        elif kind == "observe":
            if pending is None:
                raise ValueError("observe event without a pending proposal")
            trace.iterations.append(
                IterationRecord(
                    t=pending["t"],
                    proposal=pending["proposal"],
                    kernel=pending["kernel"],
                    decision=pending["decision"] or Decision.ACCEPT,
                    theta_evaluated=np.asarray(ev["theta"], float),
                    psi=float(ev["psi"]),
                    incumbent_theta=np.asarray(ev["incumbent_theta"], float),
                    incumbent_psi=float(ev["incumbent_psi"]),
                    theta_human=pending["theta_human"],
                    report=pending["report"],
                )
            )
            pending = None
        else:
            raise ValueError(f"unknown event kind {kind!r}")
    return trace


def dump_event(event: dict) -> str:
    return json.dumps(event, sort_keys=True)


def write_trace(trace: RunTrace, path: str | Path) -> None:
    path = Path(path)
    lines = [dump_event(ev) for ev in trace_to_events(trace)]
    path.write_text("\n".join(lines) + "\n")


def read_events(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def read_trace(path: str | Path) -> RunTrace:
    return events_to_trace(read_events(path))
