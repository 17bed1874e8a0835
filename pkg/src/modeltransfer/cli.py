"""Command line entry point: ``modeltransfer {run,bounds,gap,validate}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .analysis import performance_gap_bound, realisability_gap, weissman_bound
from .errors import InvalidArgumentError, NumericalError
from .experiment import config_from_dict, load_config, run_experiment
from .likelihood import TransitionDataset, count_statistics
from .models import load_model, model_from_dict, sources_from_dict
from .runner import RunLog


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.full_scale:
        cfg.full_scale = True
    if args.T is not None:
        cfg.T = args.T
    root = run_experiment(cfg, out=args.out, workers=args.workers)
    print(f"wrote {cfg.n_tasks * cfg.n_seeds} run log(s) and metrics to {root}")
    return 0


def _cmd_bounds(args) -> int:
    out = {}
    if args.log:
        log = RunLog.from_jsonl(args.log)
        if not log.records:
            raise InvalidArgumentError("run log has no records")
        first = log.records[0]
        if not isinstance(first["state"], int):
            raise InvalidArgumentError("bounds from logs are defined for tabular runs only")
        model = log.final_model
        S = args.n_states or (model.n_states if model is not None else None)
        A = args.n_actions or (model.n_actions if model is not None else None)
        if S is None or A is None:
            raise InvalidArgumentError("pass --n-states and --n-actions when the log has no final model")
        data = [(r["state"], r["action"], r["next_state"]) for r in log.records]
        out["weissman_bound"] = weissman_bound(count_statistics(data, S, A), S, args.delta)
        out["delta"] = args.delta
        eps_e = log.summary.get("eps_estim") if args.eps_estim is None else args.eps_estim
        eps_r = log.summary.get("eps_realise") if args.eps_realise is None else args.eps_realise
        gamma = args.gamma if args.gamma is not None else (model.discount if model is not None else None)
    else:
        eps_e, eps_r, gamma = args.eps_estim, args.eps_realise, args.gamma
    if eps_e is not None and eps_r is not None and gamma is not None:
        out["eps_estim"] = eps_e
        out["eps_realise"] = eps_r
        out["gamma"] = gamma
        out["performance_gap_bound"] = performance_gap_bound(eps_e, eps_r, gamma)
    if not out:
        raise InvalidArgumentError("give --log, or all of --eps-estim, --eps-realise and --gamma")
    print(json.dumps(out, indent=1, sort_keys=True))
    return 0


def _cmd_gap(args) -> int:
    sources = sources_from_dict(json.loads(Path(args.sources).read_text()))
    target = load_model(args.target)
    gap, w = realisability_gap(sources, target)
    print(json.dumps({"gap": gap, "weights": w.w.tolist(), "realisable": gap <= args.tol}, indent=1))
    return 0


def _detect_kind(path: Path, data) -> str:
    if path.suffix in (".yaml", ".yml"):
        return "config"
    if path.suffix == ".jsonl":
        return "dataset"
    if isinstance(data, dict) and "sources" in data:
        return "sources"
    if isinstance(data, dict) and "kind" in data:
        return "model"
    return "config"


def validate_file(path, kind: str = "auto") -> str:
    """Lint one file; returns a short description or raises with the problem."""
    path = Path(path)
    text = path.read_text()
    if kind == "auto":
        data = None
        if path.suffix == ".json":
            data = json.loads(text)
        kind = _detect_kind(path, data)
    if kind == "config":
        data = yaml.safe_load(text)
        if data is not None and not isinstance(data, dict):
            raise InvalidArgumentError("config file must hold a mapping")
        cfg = config_from_dict(data or {})
        return f"config ok: {cfg.algorithm} on {cfg.environment['kind']}, T={cfg.steps}"
    if kind == "model":
        mdl = model_from_dict(json.loads(text))
        return f"model ok: {mdl.kind}"
    if kind == "sources":
        src = sources_from_dict(json.loads(text))
        return f"sources ok: {src.m} {src.kind} model(s)"
    if kind == "dataset":
        data = TransitionDataset.from_jsonl(path)
        return f"dataset ok: {len(data)} record(s)"
    raise InvalidArgumentError(f"unknown file kind {kind!r}")


def _cmd_validate(args) -> int:
    status = 0
    for f in args.files:
        try:
            print(f"{f}: {validate_file(f, args.kind)}")
        except (InvalidArgumentError, NumericalError, ValueError, KeyError, TypeError, OSError) as exc:
            print(f"{f}: INVALID: {exc}")
            status = 1
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modeltransfer", description="Model transfer by maximum-likelihood mixing.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", help="YAML run configuration (defaults apply to missing fields)")
    r.add_argument("--seed", type=int, help="master seed (overrides the config)")
    r.add_argument("--workers", type=int, help="parallel worker processes")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--T", type=int, help="steps per run (overrides the config)")
    r.add_argument("--full-scale", action="store_true", help="use the full-scale step count when T is unset")
    r.set_defaults(func=_cmd_run)

    b = sub.add_parser("bounds", help="evaluate the performance-gap and concentration bounds")
    b.add_argument("--log", help="RunLog JSONL file of a tabular run")
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--eps-estim", type=float)
    b.add_argument("--eps-realise", type=float)
    b.add_argument("--gamma", type=float)
    b.add_argument("--n-states", type=int)
    b.add_argument("--n-actions", type=int)
    b.set_defaults(func=_cmd_bounds)

    g = sub.add_parser("gap", help="realisability gap of a target w.r.t. a source set")
    g.add_argument("--sources", required=True, help="JSON file with a 'sources' list")
    g.add_argument("--target", required=True, help="JSON model file")
    g.add_argument("--tol", type=float, default=1e-6, help="gap below which the target counts as realisable")
    g.set_defaults(func=_cmd_gap)

    v = sub.add_parser("validate", help="lint configs, models, source sets and datasets")
    v.add_argument("files", nargs="+")
    v.add_argument("--kind", default="auto", choices=["auto", "config", "model", "sources", "dataset"])
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgumentError, NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
