"""Interaction loop shared by every agent, plus run configuration and logs.

Each run draws from three independent generator streams: ``env`` for the
environment (resets and transitions), ``agent`` for exploration and
posterior sampling, ``meta`` for model selection. Because agents never
touch the environment stream, two agents that choose the same actions see
the same transitions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import RegretOracle
from .envs import Environment, env_step
from .errors import InvalidArgumentError
from .models import model_from_dict, model_to_dict
from .planning import LQRGain, TabularPolicy


@dataclass
class AgentConfig:
    """Optimizer, planner and loop knobs common to all algorithms."""

    opt_tol: float = 1e-8
    opt_max_iter: int = 500
    vi_tol: float = 1e-6
    riccati_tol: float = 1e-9
    riccati_max_iter: int = 10_000
    riccati_on_raw_A: bool = False
    reopt_every: int = 1
    epsilon: float = 0.0
    log_regret: bool = True
    regret_horizon: int = 200
    ridge: float = 1e-6
    reward_prior_mean: float = 0.5
    dirichlet_alpha: float = 1.0
    mvr_precision: float = 1.0
    psrl_resample: str = "step"
    psrl_episode_length: int = 100

    def __post_init__(self):
        for name in ("opt_tol", "vi_tol", "riccati_tol", "ridge", "dirichlet_alpha", "mvr_precision"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        for name in ("opt_max_iter", "riccati_max_iter", "reopt_every", "regret_horizon", "psrl_episode_length"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgumentError("epsilon must lie in [0, 1]")
        if self.psrl_resample not in ("step", "episode"):
            raise InvalidArgumentError("psrl_resample must be 'step' or 'episode'")


@dataclass
class Streams:
    env: np.random.Generator
    agent: np.random.Generator
    meta: np.random.Generator


def make_streams(rng) -> Streams:
    """Three independent streams from an int, a SeedSequence or a Generator.

    A Generator becomes the environment stream itself and the other two are
    spawned from it, which leaves its own state untouched.
    """
    if isinstance(rng, Streams):
        return rng
    if isinstance(rng, np.random.Generator):
        agent, meta = rng.spawn(2)
        return Streams(rng, agent, meta)
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    env, agent, meta = (np.random.default_rng(s) for s in seq.spawn(3))
    return Streams(env, agent, meta)


def plain(x):
    """JSON-ready copy of a state, action or weight vector."""
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


CORE_FIELDS = ("t", "state", "action", "next_state", "reward", "cum_reward", "regret", "w", "model_choice")


@dataclass
class RunLog:
    algorithm: str
    initial_state: object
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    final_model: object = None
    final_policy: object = None
    final_weights: object = None

    def __len__(self):
        return len(self.records)

    def core(self) -> list:
        """Records restricted to the fields every algorithm writes."""
        return [{k: r.get(k) for k in CORE_FIELDS} for r in self.records]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_jsonl(self, path) -> None:
        """One JSON object per step; the summary goes to a sibling ``.summary.json``."""
        path = Path(path)
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")
        with open(summary_path(path), "w") as fh:
            json.dump(self.summary_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def summary_dict(self) -> dict:
        d = {"algorithm": self.algorithm, "initial_state": plain(self.initial_state), "n_records": len(self.records)}
        if self.final_weights is not None:
            d["final_weights"] = plain(np.asarray(self.final_weights))
        if self.final_model is not None:
            d["final_model"] = model_to_dict(self.final_model)
        pol = self.final_policy
        if isinstance(pol, TabularPolicy):
            d["final_policy"] = pol.action.tolist()
        elif isinstance(pol, LQRGain):
            d["final_policy"] = pol.K.tolist()
        d.update(self.summary)
        return d

    @classmethod
    def from_jsonl(cls, path) -> "RunLog":
        path = Path(path)
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        summ = {}
        sp = summary_path(path)
        if sp.exists():
            summ = json.loads(sp.read_text())
        log = cls(summ.pop("algorithm", "unknown"), summ.pop("initial_state", None), records)
        summ.pop("n_records", None)
        if "final_model" in summ:
            log.final_model = model_from_dict(summ.pop("final_model"))
        if "final_weights" in summ:
            log.final_weights = np.array(summ.pop("final_weights"))
        if "final_policy" in summ:
            pol = np.array(summ.pop("final_policy"))
            log.final_policy = TabularPolicy(pol) if pol.ndim == 1 else LQRGain(pol, None)
        log.summary = summ
        return log


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


def choose_action(env: Environment, policy, s, cfg: AgentConfig, rng):
    """Greedy action, optionally perturbed by the epsilon knob.

    Tabular: epsilon-greedy over actions. LQR: Gaussian action noise with
    standard deviation epsilon. With epsilon = 0 no draw is made.
    """
    if env.kind == "tabular":
        a = policy(s)
        if cfg.epsilon > 0 and rng.random() < cfg.epsilon:
            a = int(rng.integers(env.true_model.n_actions))
        return a
    a = policy(s)
    if cfg.epsilon > 0:
        a = a + cfg.epsilon * rng.standard_normal(a.shape)
    return a


def run_agent(env: Environment, T: int, agent, cfg: AgentConfig, streams: Streams, algorithm: str,
              oracle: Optional[RegretOracle] = None) -> RunLog:
    """Drive ``agent`` for ``T`` interactions.

    The agent exposes ``plan(t) -> (policy, info)`` and
    ``observe(s, a, s_next, r, episode_end)``. ``info`` carries ``w``,
    ``choice`` and optional extra fields copied into the record.
    Episodic environments reset after ``env.horizon`` steps while the data
    keeps accumulating.
    """
    if T < 0:
        raise InvalidArgumentError("T must be non-negative")
    if oracle is None and cfg.log_regret:
        oracle = RegretOracle(env.true_model, horizon=cfg.regret_horizon, riccati_on_raw_A=cfg.riccati_on_raw_A)
    s = env.reset(streams.env)
    log = RunLog(algorithm, plain(s))
    cum = 0.0
    ep = 0
    records = log.records
    for t in range(T):
        policy, info = agent.plan(t)
        a = choose_action(env, policy, s, cfg, streams.agent)
        s_next, r = env_step(env, s, a, streams.env)
        ep += 1
        end = env.horizon is not None and ep >= env.horizon
        agent.observe(s, a, s_next, r, end)
        cum += r
        rec = {
            "t": t,
            "state": plain(s),
            "action": plain(a),
            "next_state": plain(s_next),
            "reward": float(r),
            "cum_reward": cum,
            "regret": oracle(policy) if oracle is not None else None,
            "w": info.get("w"),
            "model_choice": info["choice"],
        }
        extra = info.get("extra")
        if extra:
            rec.update(extra)
        records.append(rec)
        if end:
            s = env.reset(streams.env)
            ep = 0
        else:
            s = s_next
    # final estimate and plan on the full dataset
    policy, info = agent.plan(T)
    log.final_policy = policy
    log.final_model = info.get("model")
    w = info.get("w")
    log.final_weights = None if w is None else np.asarray(w)
    log.summary["final_choice"] = info["choice"]
    log.summary["config"] = asdict(cfg)
    return log
