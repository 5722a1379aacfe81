"""Command-line interface.

Subcommands: run (single optimization), collab (gated optimization),
explain (attribute one iteration of a stored trace), batch (full
experiment), paths (informativeness-path CSV), check-k (sample-size
search). Flags override config-file values, which override defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionSpec
from .benchmarks import TargetSpec, make_target
from .events import read_trace, write_trace
from .explain import component_games, explain_iteration, informativeness_path
from .harness import AgentSpec, ExperimentConfig, default_agents, run_batch
from .loop import BoConfig, HumanModel, InterventionPolicy, rebuild_models, run_bo, run_collaborative
from .shapley import find_sufficient_k


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config {path}: {exc}")


def _merged(config: dict, args: argparse.Namespace, key: str, flag: str, default):
    """flag > config > default"""
    value = getattr(args, flag, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _acquisition_from(config: dict, args: argparse.Namespace) -> AcquisitionSpec:
    base = dict(config.get("acquisition", {}))
    if getattr(args, "acquisition", None):
        base["kind"] = args.acquisition
    for flag, key in (("lam", "lambda"), ("tau", "tau"), ("alpha", "alpha"), ("rho", "rho")):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    base.setdefault("kind", "cb")
    return AcquisitionSpec.from_dict(base)


def _target_from(config: dict, args: argparse.Namespace) -> TargetSpec:
    base = dict(config.get("target", {}))
    if getattr(args, "target", None):
        base["kind"] = args.target
    if getattr(args, "noise", None):
        base["noise"] = args.noise
    if getattr(args, "noise_sd", None) is not None:
        base["noise_sd"] = args.noise_sd
    if getattr(args, "utility_seed", None) is not None:
        base["utility_seed"] = args.utility_seed
    if not base.get("kind"):
        raise SystemExit("no target given (use --target or a config file)")
    if base["kind"] == "gp_utility":
        base.setdefault("direction", "maximize")
    return TargetSpec.from_dict(base)


def _bo_config(config: dict, args: argparse.Namespace, space) -> BoConfig:
    return BoConfig(
        space=space,
        acquisition=_acquisition_from(config, args),
        n_init=int(_merged(config, args, "n_init", "n_init", 3)),
        max_iterations=int(_merged(config, args, "iterations", "iterations", 10)),
        optimizer_budget=_merged(config, args, "optimizer_budget", "budget", None),
        seed=int(_merged(config, args, "seed", "seed", 0)),
        shapley_k=int(_merged(config, args, "shapley_k", "k", 1000)),
        attach_reports=bool(_merged(config, args, "attach_reports", "explain_reports", False)),
        background_size=_merged(config, args, "background_size", "background", None),
    )


def _policy_from(config: dict, args: argparse.Namespace) -> InterventionPolicy:
    base = dict(config.get("policy", {}))
    if getattr(args, "policy", None):
        base["variant"] = args.policy
    if getattr(args, "beta", None) is not None:
        base["beta"] = args.beta
    if getattr(args, "k_every", None) is not None:
        base["k"] = args.k_every
    if "variant" not in base:
        raise SystemExit("no intervention policy given (use --policy or a config file)")
    return InterventionPolicy.from_dict(base)


def _human_from(config: dict, args: argparse.Namespace) -> HumanModel:
    base = dict(config.get("human", {}))
    if getattr(args, "human_lambda", None) is not None:
        base["lambda_h"] = args.human_lambda
    if getattr(args, "human_prior_size", None) is not None:
        base["prior_size"] = args.human_prior_size
    return HumanModel.from_dict(base)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    target = make_target(_target_from(config, args))
    bo = _bo_config(config, args, target.space)
    trace = run_bo(bo, target)
    write_trace(trace, args.out)
    best = trace.incumbent
    print(f"wrote {args.out}; incumbent psi={best.psi:.6g} at {best.theta.tolist()}")
    return 0


def cmd_collab(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    target = make_target(_target_from(config, args))
    bo = _bo_config(config, args, target.space)
    policy = _policy_from(config, args)
    human = None
    if policy.needs_human:
        human = _human_from(config, args)
        if human.prior_space is None and target.optimum_theta is not None:
            fraction = float(_merged(config, args, "human_prior_fraction", "human_prior_fraction", 0.5))
            human = HumanModel(
                lambda_h=human.lambda_h,
                prior_size=human.prior_size,
                prior_space=target.space.subbox(target.optimum_theta, fraction),
                share_history=human.share_history,
                optimizer_budget=human.optimizer_budget,
            )
    trace = run_collaborative(bo, target, policy, human)
    write_trace(trace, args.out)
    overrides = sum(1 for rec in trace.iterations if rec.decision.value == "override")
    print(f"wrote {args.out}; incumbent psi={trace.incumbent.psi:.6g}; overrides={overrides}")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    report = explain_iteration(trace, args.iter, None, args.k, args.seed)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_batch(args: argparse.Namespace) -> int:
    raw = _load_config(args.config)
    if not raw:
        raise SystemExit("batch needs --config")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.outdir is not None:
        raw["outdir"] = args.outdir
    if "agents" not in raw:
        raw["agents"] = [a.to_dict() for a in default_agents()]
    try:
        config = ExperimentConfig.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise SystemExit(f"malformed config: {exc}")
    result = run_batch(config)
    print(f"wrote {config.outdir}: {sum(len(v) for v in result.traces.values())} traces")
    if result.failures:
        for agent, rep, msg in result.failures:
            print(f"FAILED {agent} rep {rep}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_paths(args: argparse.Namespace) -> int:
    traces = [read_trace(p) for p in args.traces]
    path = informativeness_path(traces, None, args.k, args.seed)
    path.to_csv(args.out)
    print(f"wrote {args.out} ({path.n_restarts} restarts, {path.n_iterations} iterations)")
    return 0


def cmd_check_k(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    t = args.iter if args.iter is not None else len(trace.iterations)
    spec = trace.acquisition
    models = rebuild_models(trace, t, spec)
    rng = np.random.default_rng(args.seed)
    background = trace.space.sample_uniform(1000 * trace.space.dim, rng)
    games = component_games(spec, models, trace.iterations[t - 1].proposal, background)
    K, verdict, _ = find_sufficient_k(games, rng, k_start=args.k0)
    status = "sufficient" if verdict.overall else "insufficient at cap"
    for name, g in verdict.games.items():
        print(
            f"  {name}: payout={g.payout:.6g} error={g.efficiency_error:.6g} "
            f"threshold={g.threshold:.6g} {'ok' if g.sufficient else 'increase K'}"
        )
    print(f"K={K} ({status})")
    return 0 if verdict.overall else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glassbo",
        description="Bayesian optimization with per-parameter attribution of every proposal",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--n-init", dest="n_init", type=int, default=None)
        p.add_argument("--budget", type=int, default=None, help="acquisition optimizer budget")
        p.add_argument("--k", type=int, default=None, help="attribution sample count")
        p.add_argument("--background", type=int, default=None, help="background sample count")
        p.add_argument("--target", choices=("hyper_ellipsoid", "hetero_ellipsoid", "gp_utility"))
        p.add_argument("--noise", choices=("none", "homoscedastic", "heteroscedastic"))
        p.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
        p.add_argument("--utility-seed", dest="utility_seed", type=int, default=None)
        p.add_argument("--acquisition", choices=("cb", "racb", "uacb"))
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--rho", type=float, default=None)

    p_run = sub.add_parser("run", help="single optimization run")
    add_common(p_run)
    p_run.add_argument("--explain-reports", action="store_true", default=None)
    p_run.add_argument("--out", default="trace.jsonl")
    p_run.set_defaults(fn=cmd_run)

    p_collab = sub.add_parser("collab", help="collaborative run with an intervention gate")
    add_common(p_collab)
    p_collab.add_argument("--explain-reports", action="store_true", default=None)
    p_collab.add_argument(
        "--policy", choices=("never", "always", "param_ratio", "every_k", "shap_ratio", "tree_rule")
    )
    p_collab.add_argument("--beta", type=float, default=None)
    p_collab.add_argument("--k-every", dest="k_every", type=int, default=None)
    p_collab.add_argument("--human-lambda", dest="human_lambda", type=float, default=None)
    p_collab.add_argument("--human-prior-size", dest="human_prior_size", type=int, default=None)
    p_collab.add_argument(
        "--human-prior-fraction", dest="human_prior_fraction", type=float, default=None
    )
    p_collab.add_argument("--out", default="trace.jsonl")
    p_collab.set_defaults(fn=cmd_collab)

    p_explain = sub.add_parser("explain", help="attribute one iteration of a stored trace")
    p_explain.add_argument("--trace", required=True)
    p_explain.add_argument("--iter", type=int, required=True)
    p_explain.add_argument("--k", type=int, default=1000)
    p_explain.add_argument("--seed", type=int, default=0)
    p_explain.add_argument("--out", default=None)
    p_explain.set_defaults(fn=cmd_explain)

    p_batch = sub.add_parser("batch", help="full experiment")
    p_batch.add_argument("--config", required=False)
    p_batch.add_argument("--seed", type=int, default=None)
    p_batch.add_argument("--outdir", default=None)
    p_batch.set_defaults(fn=cmd_batch)

    p_paths = sub.add_parser("paths", help="informativeness-path CSV across traces")
    p_paths.add_argument("--traces", nargs="+", required=True)
    p_paths.add_argument("--k", type=int, default=1000)
    p_paths.add_argument("--seed", type=int, default=0)
    p_paths.add_argument("--out", default="paths.csv")
    p_paths.set_defaults(fn=cmd_paths)

    p_check = sub.add_parser("check-k", help="double K until the adequacy check passes")
    p_check.add_argument("--trace", required=True)
    p_check.add_argument("--iter", type=int, default=None)
    p_check.add_argument("--k0", type=int, default=100)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(fn=cmd_check_k)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
