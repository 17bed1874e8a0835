"""Experiment harness: configuration, task generation, seeded runs and metrics.

Seeding. A master seed fans out through ``SeedSequence(master,
spawn_key=...)``: task ``k`` is generated from key ``(0, k)`` and run
``(k, j)`` draws its three streams from key ``(1, k, j)``. Streams depend
only on their own indices, so adding tasks or seeds leaves existing runs
unchanged, and different algorithms on the same (task, seed) see the same
environment stream.

Artifacts written by :func:`run_experiment` under the output directory::

    config.yaml                       resolved configuration
    tasks/task_KKK.json               sources and target model of task K
    logs/task_KKK_seed_JJJ.jsonl      one step record per line
    logs/task_KKK_seed_JJJ.summary.json
    metrics.csv                       per-step aggregate over all runs
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import envs
from .analysis import best_kl_proxy, l1_summed, performance_gap_bound, realisability_gap, weissman_bound
from .baselines import run_psrl
from .errors import GenerationError, InvalidArgumentError
from .likelihood import count_statistics
from .models import LQRModel, SourceSet, TabularMDP, model_to_dict, sources_to_dict
from .runner import AgentConfig, RunLog
from .transfer import MetaConfig, run_empirical, run_meta_mlemtrl, run_mlemtrl, run_oracle

ALGORITHMS = ("mlemtrl", "meta_mlemtrl", "psrl", "oracle", "empirical")
ENV_KINDS = ("chain", "random_tabular", "cartpole", "random_lqr")
DESK_T = 10_000
FULL_T = 100_000

DEFAULT_ENVS = {
    "chain": {"n_states": 5, "source_slips": [0.01, 0.20, 0.50], "discount": 0.95, "reward_noise": 0.1},
    "random_tabular": {"n_states": 5, "n_actions": 2, "n_sources": 3, "discount": 0.9, "reward_noise": 0.1},
    "cartpole": {
        "sources": [
            {"gravity": 9.8, "mass_cart": 1.0, "mass_pole": 0.1, "pole_length": 0.5},
            {"gravity": 11.0, "mass_cart": 2.0, "mass_pole": 0.3, "pole_length": 1.0},
            {"gravity": 8.0, "mass_cart": 0.5, "mass_pole": 0.05, "pole_length": 0.25},
        ],
        "dt": 0.02, "noise_var": 1e-4, "horizon": 200, "init_scale": 0.1,
    },
    "random_lqr": {"d_s": 4, "d_a": 1, "source_seeds": [0, 1, 2], "noise_var": 1e-2, "horizon": 200,
                   "init_scale": 1.0},
}


@dataclass
class RunConfig:
    """Everything that determines an experiment. Every field has a default.

    ``environment`` holds ``kind`` plus the generator fields of that kind
    (see ``DEFAULT_ENVS``). ``perturbation`` is the distance scale used to
    push targets out of the hull when ``realisable`` is false. ``T`` of
    ``None`` means the desk-scale default, or the full scale when
    ``full_scale`` is set.
    """

    environment: dict = field(default_factory=lambda: {"kind": "chain"})
    algorithm: str = "mlemtrl"
    T: Optional[int] = None
    full_scale: bool = False
    n_tasks: int = 10
    n_seeds: int = 1
    realisable: bool = True
    perturbation: float = 0.3
    reward_mode: str = "known"
    meta_p: float = 0.5
    master_seed: int = 0
    workers: int = 1
    out: str = "runs"
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if isinstance(self.agent, dict):
            self.agent = _build_agent_config(self.agent)
        env = dict(self.environment or {})
        kind = env.get("kind", "chain")
        if kind not in ENV_KINDS:
            raise InvalidArgumentError(f"environment.kind: unknown kind {kind!r}; expected one of {ENV_KINDS}")
        merged = {"kind": kind, **DEFAULT_ENVS[kind]}
        unknown = set(env) - set(merged)
        if unknown:
            raise InvalidArgumentError(f"environment: unknown field(s) {sorted(unknown)} for kind {kind!r}")
        merged.update(env)
        self.environment = merged
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgumentError(f"algorithm: {self.algorithm!r} is not one of {ALGORITHMS}")
        if self.T is not None and int(self.T) < 0:
            raise InvalidArgumentError("T: must be non-negative")
        for name in ("n_tasks", "n_seeds", "workers"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name}: must be at least 1")
        if self.reward_mode not in ("known", "learned"):
            raise InvalidArgumentError("reward_mode: must be 'known' or 'learned'")
        if self.reward_mode == "learned" and kind in ("cartpole", "random_lqr"):
            raise InvalidArgumentError("reward_mode: LQR tasks have known quadratic costs")
        if not 0.0 <= self.meta_p <= 1.0:
            raise InvalidArgumentError("meta_p: must lie in [0, 1]")
        if not self.perturbation > 0:
            raise InvalidArgumentError("perturbation: must be positive")
        if kind in ("chain", "random_tabular") and self.perturbation > 1:
            raise InvalidArgumentError("perturbation: must lie in (0, 1] for tabular tasks")

    @property
    def steps(self) -> int:
        if self.T is not None:
            return int(self.T)
        return FULL_T if self.full_scale else DESK_T

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["T"] = self.steps
        return d


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_AGENT_FIELDS = {f.name: f for f in dataclasses.fields(AgentConfig)}


def _coerce(value, default):
    # YAML reads "1e-8" as a string; coerce by the default's type
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidArgumentError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _build_agent_config(d: dict) -> AgentConfig:
    unknown = set(d) - set(_AGENT_FIELDS)
    if unknown:
        raise InvalidArgumentError(f"agent: unknown field(s) {sorted(unknown)}")
    base = AgentConfig()
    kwargs = {}
    for k, v in d.items():
        try:
            kwargs[k] = _coerce(v, getattr(base, k))
        except (TypeError, ValueError, InvalidArgumentError) as exc:
            raise InvalidArgumentError(f"agent.{k}: {exc}") from None
    return AgentConfig(**kwargs)


def config_from_dict(d: dict) -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - set(_CONFIG_FIELDS)
    if unknown:
        raise InvalidArgumentError(f"unknown config field(s) {sorted(unknown)}")
    base = RunConfig()
    kwargs = {}
    for k, v in d.items():
        if k in ("environment", "agent") or v is None:
            kwargs[k] = v
            continue
        try:
            kwargs[k] = _coerce(v, getattr(base, k))
        except (TypeError, ValueError, InvalidArgumentError) as exc:
            raise InvalidArgumentError(f"{k}: {exc}") from None
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise InvalidArgumentError("config file must hold a mapping")
    return config_from_dict(data or {})


# -- task generation -------------------------------------------------------------

@dataclass
class Task:
    index: int
    sources: SourceSet
    env: envs.Environment
    realisable: bool
    target_weights: Optional[np.ndarray] = None

    @property
    def target(self):
        return self.env.true_model

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "realisable": self.realisable,
            "target_weights": None if self.target_weights is None else self.target_weights.tolist(),
            "target": model_to_dict(self.target),
            **sources_to_dict(self.sources),
        }


def task_seed(master_seed: int, task: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(0, task))


def run_seed(master_seed: int, task: int, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(1, task, seed))


def random_kernel(rng, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))


def random_tabular_sources(rng, n_states: int, n_actions: int, n_sources: int, discount: float) -> SourceSet:
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return SourceSet(tuple(TabularMDP(random_kernel(rng, n_states, n_actions), R, discount) for _ in range(n_sources)))


def perturb_tabular(hull_point: np.ndarray, rng, magnitude: float) -> np.ndarray:
    """Blend a hull kernel with a random kernel: (1 - eps) T + eps U."""
    S, A, _ = hull_point.shape
    U = random_kernel(rng, S, A)
    return (1.0 - magnitude) * hull_point + magnitude * U


def perturb_lqr(mean: np.ndarray, rng, magnitude: float) -> np.ndarray:
    """Add a random direction of Frobenius length ``magnitude * |mean|_F``."""
    G = rng.standard_normal(mean.shape)
    return mean + magnitude * np.linalg.norm(mean) * G / np.linalg.norm(G)


def make_task(cfg: RunConfig, index: int) -> Task:
    rng = np.random.default_rng(task_seed(cfg.master_seed, index))
    e = cfg.environment
    kind = e["kind"]
    if kind in ("chain", "random_tabular"):
        if kind == "chain":
            sources = SourceSet(tuple(envs.chain_mdp(e["n_states"], s, e["discount"]) for s in e["source_slips"]))
        else:
            sources = random_tabular_sources(rng, e["n_states"], e["n_actions"], e["n_sources"], e["discount"])
        w = rng.dirichlet(np.ones(sources.m))
        T = sources.stacked_transitions @ w
        if not cfg.realisable:
            T = perturb_tabular(T, rng, cfg.perturbation)
            w = None
        first = sources.models[0]
        target = TabularMDP(T, first.rewards, first.discount)
        env = envs.tabular_environment(target, cfg.reward_mode, e["reward_noise"])
        env.spec = {"kind": kind}
        return Task(index, sources, env, cfg.realisable, w)

    if kind == "cartpole":
        sources = SourceSet(tuple(envs.cartpole_lqr(dt=e["dt"], noise_var=e["noise_var"], **p) for p in e["sources"]))
    else:
        sources = SourceSet(tuple(envs.random_lqr(e["d_s"], e["d_a"], int(s), e["noise_var"]) for s in e["source_seeds"]))
    first = sources.models[0]
    for _ in range(100):
        w = rng.dirichlet(np.ones(sources.m))
        M = np.tensordot(w, sources.stacked_means, axes=1)
        if not cfg.realisable:
            M = perturb_lqr(M, rng, cfg.perturbation)
        target = LQRModel(M, first.noise_cov, first.cost_state, first.cost_action)
        if envs.is_stabilizable(target.F, target.B):
            break
    else:
        raise GenerationError("could not draw a stabilizable target in 100 tries")
    env = envs.lqr_environment(target, e["horizon"], e["init_scale"])
    env.spec = {"kind": kind}
    return Task(index, sources, env, cfg.realisable, w if cfg.realisable else None)


# -- runs ---------------------------------------------------------------------------

def run_one(cfg: RunConfig, task: Task, seed: int) -> RunLog:
    rng = run_seed(cfg.master_seed, task.index, seed)
    T, a = cfg.steps, cfg.agent
    alg = cfg.algorithm
    if alg == "mlemtrl":
        log = run_mlemtrl(task.env, task.sources, T, a, rng)
    elif alg == "meta_mlemtrl":
        log = run_meta_mlemtrl(task.env, task.sources, T, MetaConfig(cfg.meta_p), a, rng)
    elif alg == "psrl":
        log = run_psrl(task.env, T, a, rng)
    elif alg == "oracle":
        log = run_oracle(task.env, T, a, rng)
    else:
        log = run_empirical(task.env, T, a, rng)
    log.summary.update(run_metrics(task, log))
    log.summary["task"] = task.index
    log.summary["seed"] = seed
    return log


def run_metrics(task: Task, log: RunLog, delta: float = 0.05) -> dict:
    """Distances and bound values appended to a run's summary."""
    out = {}
    gap, w_gap = realisability_gap(task.sources, task.target)
    out["eps_realise"] = gap
    out["gap_weights"] = w_gap.w.tolist()
    final = log.final_model
    out["kl_best_proxy"] = best_kl_proxy(task.sources, task.target)[0]
    if isinstance(task.target, TabularMDP):
        if final is not None:
            out["final_l1"] = l1_summed(final.transitions, task.target.transitions)
            hull = task.sources.stacked_transitions @ w_gap.w
            out["eps_estim"] = l1_summed(final.transitions, hull)
            out["performance_gap_bound"] = performance_gap_bound(out["eps_estim"], gap, task.target.discount)
        S, A = task.target.n_states, task.target.n_actions
        data = [(r["state"], r["action"], r["next_state"]) for r in log.records]
        out["weissman_bound"] = weissman_bound(count_statistics(data, S, A), S, delta)
        out["weissman_delta"] = delta
    elif final is not None:
        out["final_frobenius"] = float(np.linalg.norm(final.mean - task.target.mean))
    if log.records and log.records[-1]["regret"] is not None:
        out["final_regret"] = log.records[-1]["regret"]
    return out


def _job(args):
    cfg_dict, index, seed, log_path = args
    cfg = config_from_dict(cfg_dict)
    task = make_task(cfg, index)
    log = run_one(cfg, task, seed)
    log.to_jsonl(log_path)
    return _curves(log)


def _curves(log: RunLog):
    cum = log.column("cum_reward")
    reg = np.array([np.nan if r["regret"] is None else r["regret"] for r in log.records], dtype=np.float64)
    return cum, reg


def _config_dump(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    d.pop("workers")
    d.pop("out")
    return d


def run_experiment(cfg: RunConfig, out: Optional[str] = None, workers: Optional[int] = None) -> Path:
    """Run every (task, seed) pair and write the artifact tree; returns its root."""
    root = Path(out if out is not None else cfg.out)
    workers = int(workers if workers is not None else cfg.workers)
    try:
        (root / "logs").mkdir(parents=True, exist_ok=True)
        (root / "tasks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"output directory {root} is not writable: {exc}") from None
    cfg_dict = _config_dump(cfg)
    with open(root / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg_dict, fh, sort_keys=True)
    for k in range(cfg.n_tasks):
        with open(root / "tasks" / f"task_{k:03d}.json", "w") as fh:
            json.dump(make_task(cfg, k).to_dict(), fh, sort_keys=True)
            fh.write("\n")
    jobs = [(cfg_dict, k, j, str(root / "logs" / f"task_{k:03d}_seed_{j:03d}.jsonl"))
            for k in range(cfg.n_tasks) for j in range(cfg.n_seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            curves = list(pool.map(_job, jobs))
    else:
        curves = [_job(j) for j in jobs]
    write_metrics(curves, root / "metrics.csv")
    return root


# -- metrics --------------------------------------------------------------------------

METRICS_HEADER = "t,mean_avg_cum_reward,stderr,mean_regret"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics(curves, path) -> None:
    """``curves`` is a sequence of (cumulative reward, regret) arrays of equal length."""
    if not curves:
        raise InvalidArgumentError("no logs to aggregate")
    n_steps = {len(c) for c, _ in curves}
    if len(n_steps) != 1:
        raise InvalidArgumentError(f"logs have different lengths: {sorted(n_steps)}")
    T = n_steps.pop()
    cum = np.vstack([c for c, _ in curves]) if T else np.zeros((len(curves), 0))
    reg = np.vstack([r for _, r in curves]) if T else np.zeros((len(curves), 0))
    t = np.arange(1, T + 1)
    avg = cum / t
    n = avg.shape[0]
    mean = avg.mean(axis=0)
    stderr = avg.std(axis=0) / math.sqrt(n)
    with np.errstate(all="ignore"):
        mreg = reg.mean(axis=0)
    lines = [METRICS_HEADER]
    for i in range(T):
        lines.append(f"{i + 1},{_fmt(mean[i])},{_fmt(stderr[i])},{_fmt(mreg[i])}")
    Path(path).write_text("\n".join(lines) + "\n")


def emit_metrics(logs, path) -> None:
    """Aggregate RunLogs into the per-step CSV.

    Row ``t`` covers the first ``t`` interactions: the average cumulative
    reward of a log is its cumulative reward divided by ``t``; ``stderr`` is
    the standard deviation across logs divided by sqrt(number of logs).
    """
    write_metrics([_curves(log) for log in logs], path)


def read_metrics(path) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise InvalidArgumentError(f"{path} is not a metrics table")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, 4)
    return {name: rows[:, i] for i, name in enumerate(METRICS_HEADER.split(","))}
