"""Model transfer by constrained maximum likelihood, and its hierarchical variant.

Every step re-estimates the mixture weights on all data so far (warm-started
at the previous weights), plans in the mixed model and takes one action.
The hierarchical variant also fits the unconstrained maximum-likelihood
model and samples which of the two to plan in, weighting each by its prior
and its likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import optimal_values
from .baselines import NormalGammaPosterior
from .envs import Environment, env_step, is_stabilizable
from .errors import InvalidArgumentError, NotStabilizableError, NumericalError
from .likelihood import (CountTable, LQRMixtureObjective, LQRStats, TabularMixtureObjective,
                         TransitionDataset, empirical_tabular, log_lik_tabular, ridge_lqr)
from .models import LQRModel, MixtureWeights, SourceSet, TabularMDP, as_weights
from .planning import LQRGain, plan_lqr, value_iteration
from .runner import AgentConfig, RunLog, Streams, choose_action, make_streams, plain, run_agent

MLEM, EMPIRICAL = "mlem", "empirical"


@dataclass
class MetaConfig:
    prior_p: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.prior_p <= 1.0:
            raise InvalidArgumentError(f"prior_p must lie in [0, 1], got {self.prior_p}")


def meta_select(l_mlem: float, l_emp: float, p: float, rng) -> str:
    """Pick MLEM with probability p e^l_mlem / (p e^l_mlem + (1-p) e^l_emp).

    Evaluated in log space. No random draw is made when the probability is
    exactly 0 or 1. If both weights vanish, the branch the prior did not
    favour is returned (the empirical model when p = 1, MLEM when p = 0).
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p must lie in [0, 1], got {p}")
    if math.isnan(l_mlem) or math.isnan(l_emp):
        raise InvalidArgumentError("log-likelihoods must not be NaN")
    la = math.log(p) + l_mlem if p > 0 else -math.inf
    lb = math.log1p(-p) + l_emp if p < 1 else -math.inf
    if la == -math.inf and lb == -math.inf:
        if p >= 1.0:
            return EMPIRICAL
        if p <= 0.0:
            return MLEM
        return MLEM if rng.random() < p else EMPIRICAL
    if lb == -math.inf:
        return MLEM
    if la == -math.inf:
        return EMPIRICAL
    prob = 1.0 / (1.0 + math.exp(min(lb - la, 700.0)))
    if prob >= 1.0:
        return MLEM
    if prob <= 0.0:
        return EMPIRICAL
    return MLEM if rng.random() < prob else EMPIRICAL


# -- per-class learners ---------------------------------------------------------

class _TabularLearner:
    """Counts, rewards and both estimators for a tabular task."""

    def __init__(self, env: Environment, sources: Optional[SourceSet], cfg: AgentConfig, w0=None):
        mdl = env.true_model
        self.S, self.A, self.gamma = mdl.n_states, mdl.n_actions, mdl.discount
        self.cfg = cfg
        self.counts = CountTable(self.S, self.A)
        self.known_rewards = env.reward_mode == "known"
        self.R = np.ascontiguousarray(mdl.rewards) if self.known_rewards else None
        self.rpost = None if self.known_rewards else NormalGammaPosterior.prior(self.S, self.A, cfg.reward_prior_mean)
        self.sources = sources
        if sources is not None:
            if sources.kind != "tabular" or sources.models[0].transitions.shape != mdl.transitions.shape:
                raise InvalidArgumentError("sources do not match the environment")
            self.objective = TabularMixtureObjective(sources)
            self.stacked = sources.stacked_transitions
            self.w = as_weights(MixtureWeights.uniform(sources.m) if w0 is None else w0).w.copy()
        self.V = {}
        self.n_obs = 0

    def rewards(self):
        return self.R if self.known_rewards else self.rpost.mean_rewards()

    def observe(self, s, a, s_next, r):
        self.counts.add(s, a, s_next)
        if self.sources is not None:
            self.objective.add(s, a, s_next, self.S, self.A)
        if self.rpost is not None:
            self.rpost.update(s, a, r)
        self.n_obs += 1

    def estimate(self, t: int):
        if self.n_obs > 0 and t % self.cfg.reopt_every == 0:
            rep = self.objective.maximize(self.w, self.cfg.opt_tol, self.cfg.opt_max_iter)
            self.w = rep.w_star.w
        return self.w

    def mlem_model(self) -> TabularMDP:
        return TabularMDP.trusted(self.stacked @ self.w, self.rewards(), self.gamma)

    def empirical_model(self) -> TabularMDP:
        return empirical_tabular(self.counts, self.rewards(), self.gamma)

    def l_mlem(self) -> float:
        return self.objective.value(self.w)

    def l_emp(self, model) -> float:
        return log_lik_tabular(self.counts, model)

    def check_order(self, l_mlem, l_emp):
        # the unconstrained maximizer can never be beaten by a hull point
        if l_emp < l_mlem - 1e-9 * (1.0 + abs(l_mlem)):
            raise NumericalError(f"empirical log-likelihood {l_emp} below the mixture's {l_mlem}")

    def plan(self, model, key):
        V, pol = value_iteration(model, self.cfg.vi_tol, v0=self.V.get(key))
        self.V[key] = V
        return pol


class _LQRLearner:
    def __init__(self, env: Environment, sources: Optional[SourceSet], cfg: AgentConfig, w0=None):
        mdl = env.true_model
        self.task = mdl
        self.cfg = cfg
        self.stats = LQRStats(mdl.dim_state, mdl.dim_action)
        self.sources = sources
        if sources is not None:
            if sources.kind != "lqr" or sources.models[0].mean.shape != mdl.mean.shape:
                raise InvalidArgumentError("sources do not match the environment")
            self.objective = LQRMixtureObjective(sources, self.stats)
            self.means = sources.stacked_means
            self.w = as_weights(MixtureWeights.uniform(sources.m) if w0 is None else w0).w.copy()
            self.like = sources.models[0]
        else:
            self.like = mdl
        zero = np.zeros((mdl.dim_action, mdl.dim_state))
        self.gain = {}
        self.default_gain = LQRGain(zero, np.zeros((mdl.dim_state, mdl.dim_state)))
        self.plan_failures = 0
        self.n_obs = 0
        self.stale = False

    def observe(self, s, a, s_next, r):
        self.stats.add(s, a, s_next)
        self.n_obs += 1
        self.stale = True

    def _refresh(self):
        if self.sources is not None and self.stale:
            self.objective.refresh()
            self.stale = False

    def estimate(self, t: int):
        if self.n_obs > 0 and t % self.cfg.reopt_every == 0:
            self._refresh()
            rep = self.objective.maximize(self.w, self.cfg.opt_tol, self.cfg.opt_max_iter)
            self.w = rep.w_star.w
        return self.w

    def mlem_model(self) -> LQRModel:
        M = np.tensordot(self.w, self.means, axes=1)
        return LQRModel.trusted(M, self.like.noise_cov, self.like.cost_state, self.like.cost_action)

    def empirical_model(self) -> LQRModel:
        return ridge_lqr(self.stats, self.like, self.cfg.ridge)

    def l_mlem(self) -> float:
        self._refresh()
        return self.objective.value(self.w)

    def l_emp(self, model) -> float:
        return self.stats.log_lik(model)

    def check_order(self, l_mlem, l_emp):
        # only meaningful once least squares is well posed and the ridge is negligible
        if self.stats.count < self.stats.zz.shape[0]:
            return
        if np.linalg.eigvalsh(self.stats.zz)[0] <= 1e3 * self.cfg.ridge:
            return
        if l_emp < l_mlem - 1e-6 * (1.0 + abs(l_mlem)):
            raise NumericalError(f"least-squares log-likelihood {l_emp} below the mixture's {l_mlem}")

    def plan(self, model, key):
        """Riccati gain for ``model``; keeps the previous gain if ``model`` cannot be stabilized."""
        prev = self.gain.get(key, self.default_gain)
        F = model.A if self.cfg.riccati_on_raw_A else model.F
        try:
            if not is_stabilizable(F, model.B):
                raise NotStabilizableError("model fails the stabilizability test")
            P0 = prev.P if prev is not self.default_gain else None
            g = plan_lqr(model, self.cfg.riccati_on_raw_A, self.cfg.riccati_tol, self.cfg.riccati_max_iter, P0)
        except NotStabilizableError:
            self.plan_failures += 1
            return prev
        self.gain[key] = g
        return g


def _learner(env, sources, cfg, w0=None):
    if env.kind == "tabular":
        return _TabularLearner(env, sources, cfg, w0)
    return _LQRLearner(env, sources, cfg, w0)


# -- agents ---------------------------------------------------------------------------

class MLEMAgent:
    def __init__(self, env, sources, cfg, w0=None):
        self.learner = _learner(env, sources, cfg, w0)

    def plan(self, t):
        lr = self.learner
        w = lr.estimate(t)
        model = lr.mlem_model()
        pol = lr.plan(model, MLEM)
        return pol, {"w": w.tolist(), "choice": MLEM, "model": model}

    def observe(self, s, a, s_next, r, end):
        self.learner.observe(s, a, s_next, r)


class EmpiricalAgent:
    """Certainty-equivalent planning in the unconstrained maximum-likelihood model."""

    def __init__(self, env, cfg):
        self.learner = _learner(env, None, cfg)

    def plan(self, t):
        lr = self.learner
        model = lr.empirical_model()
        pol = lr.plan(model, EMPIRICAL)
        return pol, {"w": None, "choice": EMPIRICAL, "model": model}

    def observe(self, s, a, s_next, r, end):
        self.learner.observe(s, a, s_next, r)


class MetaAgent:
    def __init__(self, env, sources, cfg, meta: MetaConfig, rng, w0=None):
        self.learner = _learner(env, sources, cfg, w0)
        self.p = meta.prior_p
        self.rng = rng

    def plan(self, t):
        lr = self.learner
        w = lr.estimate(t)
        mlem = lr.mlem_model()
        emp = lr.empirical_model()
        l_m = lr.l_mlem()
        l_e = lr.l_emp(emp)
        lr.check_order(l_m, l_e)
        choice = meta_select(l_m, l_e, self.p, self.rng)
        model = mlem if choice == MLEM else emp
        pol = lr.plan(model, choice)
        return pol, {"w": w.tolist(), "choice": choice, "model": model, "extra": {"l_mlem": l_m, "l_emp": l_e}}

    def observe(self, s, a, s_next, r, end):
        self.learner.observe(s, a, s_next, r)


class OracleAgent:
    """Plans once in the true model; its regret is zero by construction."""

    def __init__(self, env, cfg):
        self.model = env.true_model
        if env.kind == "tabular":
            self.policy = optimal_values(self.model)[1]
        else:
            self.policy = plan_lqr(self.model, cfg.riccati_on_raw_A, cfg.riccati_tol, cfg.riccati_max_iter)

    def plan(self, t):
        return self.policy, {"w": None, "choice": "oracle", "model": self.model}

    def observe(self, s, a, s_next, r, end):
        pass


# -- single-step API ------------------------------------------------------------------

@dataclass
class TransferState:
    """Loop state of one MLEMTRL run. ``current_policy`` is the policy used at ``step``."""

    weights: MixtureWeights
    dataset: TransitionDataset
    current_model: object = None
    current_policy: object = None
    step: int = 0
    s: object = None
    episode_step: int = 0
    agent: object = field(default=None, repr=False)


def init_transfer_state(env: Environment, sources: SourceSet, rng, cfg: Optional[AgentConfig] = None,
                        w0=None) -> TransferState:
    cfg = cfg or AgentConfig()
    agent = MLEMAgent(env, sources, cfg, w0)
    w = MixtureWeights(agent.learner.w)
    return TransferState(w, TransitionDataset(), s=env.reset(rng), agent=agent)


def mlemtrl_step(state: TransferState, sources: SourceSet, env: Environment, rng,
                 cfg: Optional[AgentConfig] = None, agent_rng=None) -> TransferState:
    """One loop body: estimate, plan, act, observe, record. Mutates and returns ``state``."""
    cfg = cfg or AgentConfig()
    if state.agent is None:
        state.agent = MLEMAgent(env, sources, cfg, state.weights)
    pol, info = state.agent.plan(state.step)
    state.weights = MixtureWeights(np.array(info["w"]))
    state.current_model = info["model"]
    state.current_policy = pol
    a = choose_action(env, pol, state.s, cfg, agent_rng)
    s_next, r = env_step(env, state.s, a, rng)
    state.episode_step += 1
    end = env.horizon is not None and state.episode_step >= env.horizon
    state.agent.observe(state.s, a, s_next, r, end)
    state.dataset.append(plain(state.s), plain(a), plain(s_next), r)
    state.step += 1
    if end:
        state.s = env.reset(rng)
        state.episode_step = 0
    else:
        state.s = s_next
    return state


# -- full runs ------------------------------------------------------------------------

def run_mlemtrl(env: Environment, sources: SourceSet, T: int, cfg: Optional[AgentConfig] = None, rng=0,
                w0=None) -> RunLog:
    cfg = cfg or AgentConfig()
    streams = make_streams(rng)
    return run_agent(env, T, MLEMAgent(env, sources, cfg, w0), cfg, streams, "mlemtrl")


def run_meta_mlemtrl(env: Environment, sources: SourceSet, T: int, meta: MetaConfig | float = 0.5,
                     cfg: Optional[AgentConfig] = None, rng=0, w0=None) -> RunLog:
    cfg = cfg or AgentConfig()
    meta = meta if isinstance(meta, MetaConfig) else MetaConfig(float(meta))
    streams = make_streams(rng)
    return run_agent(env, T, MetaAgent(env, sources, cfg, meta, streams.meta, w0), cfg, streams, "meta_mlemtrl")


def run_empirical(env: Environment, T: int, cfg: Optional[AgentConfig] = None, rng=0) -> RunLog:
    cfg = cfg or AgentConfig()
    return run_agent(env, T, EmpiricalAgent(env, cfg), cfg, make_streams(rng), "empirical")


def run_oracle(env: Environment, T: int, cfg: Optional[AgentConfig] = None, rng=0) -> RunLog:
    cfg = cfg or AgentConfig()
    return run_agent(env, T, OracleAgent(env, cfg), cfg, make_streams(rng), "oracle")
