"""Session-oriented HTTP API for live human-in-the-loop optimization.

Each session is an append-only event log (one JSON-lines file, fsynced
per event); all state is a pure fold over that log, so replay after a
restart reconstructs sessions exactly. Proposals are never recomputed
once logged: every random draw derives from (seed, iteration), not from
process state.

Endpoints:
    POST /sessions                        create (benchmark or external target)
    GET  /sessions/{id}                   snapshot view
    POST /sessions/{id}/propose           next proposal + attribution report
    POST /sessions/{id}/decision          accept | override{theta}
    POST /sessions/{id}/observation       supply psi for external targets
    GET  /sessions/{id}/events?from=n     server-sent event stream
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import anyio
import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .acquisition import AcquisitionSpec, minimize_acquisition
from .benchmarks import Target, TargetSpec, make_target
from .explain import build_report, component_games
from .loop import fit_models, robust_hyperparams
from .shapley import find_sufficient_k
from .space import Design, Observation, ParamSpace

DEFAULT_DATA_DIR = "glassbo-sessions"
K_CAP = 64_000

# rng purposes, keyed into the per-session seed sequence
_RNG_INIT, _RNG_NOISE, _RNG_ACQ, _RNG_SHAP = 0, 1, 2, 3


def _rng(seed: int, purpose: int, t: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, t)))


# ---------------------------------------------------------------------------
# Session configuration and state fold
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    space: ParamSpace
    acquisition: AcquisitionSpec
    n_init: int
    max_iterations: int
    seed: int
    target: TargetSpec | None  # None -> external target, psi supplied by client
    shapley_k: int | None = None
    background_size: int | None = None
    optimizer_budget: int | None = None

    @property
    def external(self) -> bool:
        return self.target is None

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "n_init": self.n_init,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
            "target": self.target.to_dict() if self.target else None,
            "shapley_k": self.shapley_k,
            "background_size": self.background_size,
            "optimizer_budget": self.optimizer_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        target = d.get("target")
        return cls(
            space=ParamSpace.from_dict(d["space"]),
            acquisition=AcquisitionSpec.from_dict(d["acquisition"]),
            n_init=int(d["n_init"]),
            max_iterations=int(d["max_iterations"]),
            seed=int(d["seed"]),
            target=TargetSpec.from_dict(target) if target else None,
            shapley_k=d.get("shapley_k"),
            background_size=d.get("background_size"),
            optimizer_budget=d.get("optimizer_budget"),
        )


AWAITING_PROPOSAL = "awaiting-proposal"
AWAITING_DECISION = "awaiting-decision"
AWAITING_OBSERVATION = "awaiting-observation"
DONE = "done"


@dataclass
class SessionState:
    """Pure fold of the event log."""

    config: SessionConfig
    design: Design = field(default_factory=Design)
    iterations_observed: int = 0
    pending_init_theta: np.ndarray | None = None
    pending_proposal: dict | None = None  # propose payload awaiting decision
    pending_report: dict | None = None
    pending_evaluation: dict | None = None  # decided theta awaiting psi

    @property
    def init_complete(self) -> bool:
        return len(self.design) >= self.config.n_init and self.pending_init_theta is None

    @property
    def status(self) -> str:
        if not self.init_complete:
            return AWAITING_OBSERVATION
        if self.pending_evaluation is not None:
            return AWAITING_OBSERVATION
        if self.pending_proposal is not None:
            return AWAITING_DECISION
        if self.iterations_observed >= self.config.max_iterations:
            return DONE
        return AWAITING_PROPOSAL

    @property
    def next_iteration(self) -> int:
        return self.iterations_observed + 1

    def incumbent(self) -> dict | None:
        if len(self.design) == 0:
            return None
        best = self.design.best()
        return {"theta": best.theta.tolist(), "psi": best.psi}


def fold_state(events: list[dict]) -> SessionState:
    if not events or events[0]["kind"] != "init" or "config" not in events[0]["payload"]:
        raise ValueError("session log must start with a config-bearing init event")
    state = SessionState(config=SessionConfig.from_dict(events[0]["payload"]["config"]))
    for ev in events:
        kind, payload = ev["kind"], ev["payload"]
        if kind == "init":
            theta = np.asarray(payload["theta"], float)
            if payload.get("psi") is not None:
                state.design.append(Observation(theta, float(payload["psi"])))
            else:
                state.pending_init_theta = theta
        elif kind == "propose":
            state.pending_proposal = payload
        elif kind == "report":
            state.pending_report = payload
        elif kind == "decide":
            assert state.pending_proposal is not None
            theta = (
                payload["theta_human"]
                if payload["decision"] == "override"
                else state.pending_proposal["theta"]
            )
            state.pending_evaluation = {"t": payload["t"], "theta": theta}
        elif kind == "observe":
            theta = np.asarray(payload["theta"], float)
            psi = float(payload["psi"])
            state.design.append(Observation(theta, psi))
            if payload.get("t", 0) == 0:
                state.pending_init_theta = None
            else:
                state.iterations_observed += 1
                state.pending_proposal = None
                state.pending_report = None
                state.pending_evaluation = None
    return state


# ---------------------------------------------------------------------------
# Runtime store with append-only persistence
# ---------------------------------------------------------------------------


class SessionRuntime:
    def __init__(self, session_id: str, path: Path) -> None:
        self.id = session_id
        self.path = path
        self.lock = threading.RLock()
        self.events: list[dict] = []
        self.state: SessionState | None = None
        self.idempotency_key: str | None = None

    def append(self, kind: str, payload: dict) -> dict:
        event = {
            "seq": len(self.events),
            "ts": time.time(),
            "kind": kind,
            "payload": payload,
        }
        line = json.dumps(event, sort_keys=True)
        with self.path.open("a") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.events.append(event)
        return event

    def refold(self) -> SessionState:
        self.state = fold_state(self.events)
        return self.state


class SessionStore:
    def __init__(self, data_dir: str | Path) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, SessionRuntime] = {}
        self._by_key: dict[str, str] = {}
        self._lock = threading.Lock()
        self._load_existing()

    def _load_existing(self) -> None:
        for path in sorted(self.data_dir.glob("*.jsonl")):
            session_id = path.stem
            runtime = SessionRuntime(session_id, path)
            runtime.events = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
            if not runtime.events:
                continue
            runtime.refold()
            key = runtime.events[0]["payload"].get("idempotency_key")
            if key:
                runtime.idempotency_key = key
                self._by_key[key] = session_id
            self._sessions[session_id] = runtime

    def count(self) -> int:
        return len(self._sessions)

    def by_idempotency_key(self, key: str) -> SessionRuntime | None:
        with self._lock:
            session_id = self._by_key.get(key)
        return self._sessions.get(session_id) if session_id else None

    def create(self, idempotency_key: str | None = None) -> SessionRuntime:
        with self._lock:
            session_id = uuid.uuid4().hex[:12]
            runtime = SessionRuntime(session_id, self.data_dir / f"{session_id}.jsonl")
            self._sessions[session_id] = runtime
            if idempotency_key:
                runtime.idempotency_key = idempotency_key
                self._by_key[idempotency_key] = session_id
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        runtime = self._sessions.get(session_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return runtime


# ---------------------------------------------------------------------------
# Request / response bodies
# ---------------------------------------------------------------------------


class CreateSession(BaseModel):
    target: dict | None = None  # benchmark spec; omit for an external target
    space: dict | None = None  # required for external targets
    acquisition: dict = {"kind": "cb", "lambda": 1.0}
    n_init: int = 3
    max_iterations: int = 10
    seed: int = 0
    shapley_k: int | None = None
    background_size: int | None = None
    optimizer_budget: int | None = None
    idempotency_key: str | None = None


class DecisionBody(BaseModel):
    action: str  # "accept" | "override"
    theta: list[float] | None = None


class ObservationBody(BaseModel):
    psi: float


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def create_app(data_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="glassbo service", version="0.1.0")
    store = SessionStore(data_dir or os.environ.get("GLASSBO_SESSION_DIR", DEFAULT_DATA_DIR))
    app.state.store = store
    app.state.k_by_dim = {}
    app.state.targets = {}

    def target_for(config: SessionConfig) -> Target:
        key = json.dumps(config.target.to_dict(), sort_keys=True)
        if key not in app.state.targets:
            app.state.targets[key] = make_target(config.target)
        return app.state.targets[key]

    def session_view(runtime: SessionRuntime) -> dict:
        state = runtime.state
        assert state is not None
        view: dict[str, Any] = {
            "id": runtime.id,
            "status": state.status,
            "iteration": state.iterations_observed,
            "max_iterations": state.config.max_iterations,
            "design_size": len(state.design),
            "seq": len(runtime.events),
            "space": state.config.space.to_dict(),
            "acquisition": state.config.acquisition.to_dict(),
            "external": state.config.external,
            "incumbent": state.incumbent(),
        }
        if state.status == AWAITING_DECISION:
            view["proposal"] = state.pending_proposal
            view["report"] = state.pending_report
        if state.status == AWAITING_OBSERVATION:
            pending = (
                {"theta": state.pending_init_theta.tolist(), "t": 0}
                if state.pending_init_theta is not None
                else state.pending_evaluation
            )
            view["pending_observation"] = pending
        if state.status == DONE:
            view["done"] = {"incumbent": state.incumbent()}
        return view

    def init_thetas(config: SessionConfig) -> np.ndarray:
        return config.space.sample_uniform(config.n_init, _rng(config.seed, _RNG_INIT))

    def advance_init(runtime: SessionRuntime) -> None:
        """Queue the next pending init point for an external session."""
        state = runtime.state
        config = state.config
        if state.init_complete or state.pending_init_theta is not None:
            return
        theta = init_thetas(config)[len(state.design)]
        runtime.append("init", {"theta": theta.tolist(), "psi": None, "t": 0})
        runtime.refold()

    @app.get("/")
    def health() -> dict:
        return {"status": "ok", "sessions": store.count()}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSession) -> dict:
        if body.idempotency_key:
            existing = store.by_idempotency_key(body.idempotency_key)
            if existing is not None:
                return session_view(existing)

        if body.target is None and body.space is None:
            raise HTTPException(status_code=422, detail="external sessions need a space")
        try:
            target_spec = TargetSpec.from_dict(body.target) if body.target else None
            if target_spec is not None:
                target = make_target(target_spec)
                space = target.space
            else:
                space = ParamSpace.from_dict(body.space)
            acquisition = AcquisitionSpec.from_dict(body.acquisition)
            if body.n_init < 1 or body.max_iterations < 1:
                raise ValueError("n_init and max_iterations must be at least 1")
            config = SessionConfig(
                space=space,
                acquisition=acquisition,
                n_init=body.n_init,
                max_iterations=body.max_iterations,
                seed=body.seed,
                target=target_spec,
                shapley_k=body.shapley_k,
                background_size=body.background_size,
                optimizer_budget=body.optimizer_budget,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"invalid config: {exc}")

        runtime = store.create(body.idempotency_key)
        with runtime.lock:
            thetas = init_thetas(config)
            first_payload: dict[str, Any] = {"config": config.to_dict(), "t": 0}
            if body.idempotency_key:
                first_payload["idempotency_key"] = body.idempotency_key
            if config.external:
                first_payload.update(theta=thetas[0].tolist(), psi=None)
                runtime.append("init", first_payload)
            else:
                noise_rng = _rng(config.seed, _RNG_NOISE, 0)
                target = target_for(config)
                for i, theta in enumerate(thetas):
                    psi = float(target(theta, noise_rng))
                    payload = first_payload if i == 0 else {"t": 0}
                    payload = dict(payload)
                    payload.update(theta=theta.tolist(), psi=psi)
                    runtime.append("init", payload)
            runtime.refold()
            return session_view(runtime)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        runtime = store.get(session_id)
        with runtime.lock:
            return session_view(runtime)

    @app.post("/sessions/{session_id}/propose")
    def propose(session_id: str) -> dict:
        runtime = store.get(session_id)
        with runtime.lock:
            state = runtime.state
            if state.status != AWAITING_PROPOSAL:
                raise HTTPException(status_code=409, detail=f"session is {state.status}, not {AWAITING_PROPOSAL}")
            config = state.config
            t = state.next_iteration
            p = config.space.dim

            kernel = robust_hyperparams(state.design, config.space)
            models = fit_models(state.design, config.acquisition, kernel)
            theta = minimize_acquisition(
                config.acquisition,
                models,
                config.space,
                config.optimizer_budget,
                _rng(config.seed, _RNG_ACQ, t),
            )

            K = config.shapley_k or app.state.k_by_dim.get(p, 1000)
            shap_rng = _rng(config.seed, _RNG_SHAP, t)
            report = build_report(
                models,
                theta,
                config.acquisition,
                config.space,
                K,
                shap_rng,
                iteration=t,
                background_size=config.background_size,
            )
            if not report.adequacy.overall and config.shapley_k is None and 2 * K <= K_CAP:
                # online guardrail: search a sufficient K, then rebuild
                background = config.space.sample_uniform(
                    config.background_size or 1000 * p, _rng(config.seed, _RNG_SHAP, t)
                )
                games = component_games(config.acquisition, models, theta, background)
                K, _, _ = find_sufficient_k(games, shap_rng, k_start=2 * K, k_cap=K_CAP)
                report = build_report(
                    models,
                    theta,
                    config.acquisition,
                    config.space,
                    K,
                    _rng(config.seed, _RNG_SHAP, t),
                    iteration=t,
                    background_size=config.background_size,
                )
            if config.shapley_k is None:
                app.state.k_by_dim[p] = K

            runtime.append(
                "propose", {"t": t, "theta": theta.tolist(), "kernel": kernel.to_dict()}
            )
            runtime.append("report", {"t": t, "report": report.to_dict()})
            runtime.refold()
            return {
                "t": t,
                "theta": theta.tolist(),
                "report": report.to_dict(),
                "adequacy": report.adequacy.to_dict(),
                "status": runtime.state.status,
            }

    def observe_locked(runtime: SessionRuntime, t: int, theta: np.ndarray, psi: float) -> None:
        state = runtime.state
        design = state.design.copy()
        design.append(Observation(theta, psi))
        best = design.best()
        runtime.append(
            "observe",
            {
                "t": t,
                "theta": theta.tolist(),
                "psi": psi,
                "incumbent_theta": best.theta.tolist(),
                "incumbent_psi": best.psi,
            },
        )
        runtime.refold()

    @app.post("/sessions/{session_id}/decision")
    def decide(session_id: str, body: DecisionBody) -> dict:
        runtime = store.get(session_id)
        with runtime.lock:
            state = runtime.state
            if state.status != AWAITING_DECISION:
                raise HTTPException(status_code=409, detail=f"session is {state.status}, not {AWAITING_DECISION}")
            config = state.config
            if body.action not in ("accept", "override"):
                raise HTTPException(status_code=422, detail="action must be accept or override")
            t = state.pending_proposal["t"]
            if body.action == "override":
                if body.theta is None:
                    raise HTTPException(status_code=422, detail="override needs a theta")
                theta = np.asarray(body.theta, float)
                if not config.space.contains(theta):
                    raise HTTPException(
                        status_code=422,
                        detail=(
                            f"override theta outside bounds: lower={config.space.lower.tolist()} "
                            f"upper={config.space.upper.tolist()}"
                        ),
                    )
                payload = {"t": t, "decision": "override", "theta_human": theta.tolist()}
            else:
                theta = np.asarray(state.pending_proposal["theta"], float)
                payload = {"t": t, "decision": "accept"}
            runtime.append("decide", payload)
            runtime.refold()

            if not config.external:
                psi = float(target_for(config)(theta, _rng(config.seed, _RNG_NOISE, t)))
                observe_locked(runtime, t, theta, psi)
            return session_view(runtime)

    @app.post("/sessions/{session_id}/observation")
    def observe(session_id: str, body: ObservationBody) -> dict:
        runtime = store.get(session_id)
        with runtime.lock:
            state = runtime.state
            if state.status != AWAITING_OBSERVATION:
                raise HTTPException(
                    status_code=409, detail=f"session is {state.status}, not {AWAITING_OBSERVATION}"
                )
            if not math.isfinite(body.psi):
                raise HTTPException(status_code=422, detail="psi must be finite")
            if state.pending_init_theta is not None:
                observe_locked(runtime, 0, state.pending_init_theta, float(body.psi))
                advance_init(runtime)
            else:
                pending = state.pending_evaluation
                observe_locked(
                    runtime, int(pending["t"]), np.asarray(pending["theta"], float), float(body.psi)
                )
            return session_view(runtime)

    @app.get("/sessions/{session_id}/events")
    async def events(
        session_id: str,
        from_seq: int = Query(0, alias="from", ge=0),
        follow: bool = True,
    ):
        runtime = store.get(session_id)

        async def stream():
            idx = from_seq
            while True:
                with runtime.lock:
                    backlog = runtime.events[idx:]
                    status = runtime.state.status if runtime.state else None
                for ev in backlog:
                    idx = ev["seq"] + 1
                    yield f"id: {ev['seq']}\ndata: {json.dumps(ev, sort_keys=True)}\n\n"
                if not follow:
                    break
                if status == DONE and idx >= len(runtime.events):
                    break
                await anyio.sleep(0.1)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def main() -> None:  # pragma: no cover - manual entry point
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="run the glassbo session service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--data-dir", default=None)
    args = parser.parse_args()
    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)


if __name__ == "__main__":  # pragma: no cover
    main()
