"""Posterior sampling (PSRL) posteriors and samplers for both model classes.

The LQR posterior treats the noise covariance as known, so a sample needs
only the matrix-normal draw of the mean matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import is_stabilizable
from .errors import InvalidArgumentError, NotStabilizableError
from .models import LQRModel, TabularMDP
from .planning import LQRGain, plan_lqr, value_iteration
from .runner import AgentConfig, make_streams, run_agent


@dataclass(eq=False)
class DirichletPosterior:
    """Independent Dirichlet rows over next states. Updated in place."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 3 or np.any(self.alpha <= 0):
            raise InvalidArgumentError("alpha must be a positive (S, A, S) tensor")

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, alpha0: float = 1.0) -> "DirichletPosterior":
        return cls(np.full((n_states, n_actions, n_states), float(alpha0)))

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum(axis=2, keepdims=True)


def dirichlet_update(post: DirichletPosterior, s: int, a: int, s_next: int) -> DirichletPosterior:
    S, A, _ = post.alpha.shape
    if not (0 <= s < S and 0 <= s_next < S and 0 <= a < A):
        raise InvalidArgumentError(f"transition ({s}, {a}, {s_next}) out of range")
    post.alpha[s, a, s_next] += 1.0
    return post


def dirichlet_update_batch(post: DirichletPosterior, counts) -> DirichletPosterior:
    x = counts.x if hasattr(counts, "x") else np.asarray(counts)
    if x.shape != post.alpha.shape:
        raise InvalidArgumentError("count shape does not match the posterior")
    post.alpha += x
    return post


@dataclass(eq=False)
class NormalGammaPosterior:
    """Per-(s, a) Normal-Gamma posterior over reward mean and precision."""

    mu: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64)
        shape = self.mu.shape
        for name in ("kappa", "alpha", "beta"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), shape).copy()
            if np.any(v <= 0):
                raise InvalidArgumentError(f"{name} must be positive")
            setattr(self, name, v)

    @classmethod
    def prior(cls, n_states: int, n_actions: int, mu0: float = 0.5, kappa0: float = 1.0,
              alpha0: float = 1.0, beta0: float = 1.0) -> "NormalGammaPosterior":
        shape = (n_states, n_actions)
        return cls(np.full(shape, mu0), kappa0, alpha0, beta0)

    def update(self, s: int, a: int, r: float) -> None:
        k, m = self.kappa[s, a], self.mu[s, a]
        self.beta[s, a] += k * (r - m) ** 2 / (2.0 * (k + 1.0))
        self.mu[s, a] = (k * m + r) / (k + 1.0)
        self.kappa[s, a] = k + 1.0
        self.alpha[s, a] += 0.5

    def mean_rewards(self) -> np.ndarray:
        return np.clip(self.mu, 0.0, 1.0)

    def sample_rewards(self, rng) -> np.ndarray:
        tau = rng.standard_gamma(self.alpha) / self.beta
        means = self.mu + rng.standard_normal(self.mu.shape) / np.sqrt(self.kappa * tau)
        return np.clip(means, 0.0, 1.0)


def _dirichlet_rows(alpha: np.ndarray, rng) -> np.ndarray:
    g = rng.standard_gamma(alpha)
    tot = g.sum(axis=-1, keepdims=True)
    bad = tot[..., 0] <= 0.0
    if np.any(bad):
        # every gamma draw underflowed: fall back to the row's largest alpha
        g[bad] = 0.0
        idx = np.argmax(alpha[bad], axis=-1)
        g[bad, idx] = 1.0
        tot = g.sum(axis=-1, keepdims=True)
    return g / tot


def psrl_sample_tabular(post: DirichletPosterior, rpost: NormalGammaPosterior | None, rng,
                        rewards=None, discount: float = 0.95) -> TabularMDP:
    """One model from the posterior. ``rewards`` replaces reward sampling when given."""
    T = _dirichlet_rows(post.alpha, rng)
    if rewards is not None:
        R = np.asarray(rewards, dtype=np.float64)
    elif rpost is not None:
        R = rpost.sample_rewards(rng)
    else:
        raise InvalidArgumentError("need either known rewards or a reward posterior")
    return TabularMDP.trusted(T, R, discount)


@dataclass(eq=False)
class MatrixRegressionPosterior:
    """Matrix-normal posterior of the increment mean ``M`` with known row covariance.

    With regressor z = (a, s) and response y = s' - s, the prior
    ``M ~ MN(M0, noise_cov, Lambda0^-1)`` updates to precision
    ``Lambda = Lambda0 + sum z z^T`` and mean ``(M0 Lambda0 + sum y z^T) Lambda^-1``.
    """

    M0: np.ndarray
    Lambda0: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        self.M0 = np.atleast_2d(np.array(self.M0, dtype=np.float64))
        self.Lambda0 = np.atleast_2d(np.array(self.Lambda0, dtype=np.float64))
        self.noise_cov = np.atleast_2d(np.array(self.noise_cov, dtype=np.float64))
        d_s, d_z = self.M0.shape
        if self.Lambda0.shape != (d_z, d_z) or self.noise_cov.shape != (d_s, d_s):
            raise InvalidArgumentError("posterior parameter shapes are inconsistent")
        if not np.allclose(self.Lambda0, self.Lambda0.T) or np.min(np.linalg.eigvalsh(self.Lambda0)) <= 0:
            raise InvalidArgumentError("prior precision must be symmetric positive definite")
        self.Lambda = self.Lambda0.copy()
        self.YZ = self.M0 @ self.Lambda0
        self.count = 0

    @classmethod
    def prior(cls, dim_state: int, dim_action: int, noise_cov, precision: float = 1.0) -> "MatrixRegressionPosterior":
        dz = dim_state + dim_action
        return cls(np.zeros((dim_state, dz)), precision * np.eye(dz), noise_cov)

    @property
    def mean(self) -> np.ndarray:
        return np.linalg.solve(self.Lambda, self.YZ.T).T


def mvr_update(post: MatrixRegressionPosterior, s, a, s_next) -> MatrixRegressionPosterior:
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    y = np.atleast_1d(np.asarray(s_next, dtype=np.float64)) - s
    d_s, d_z = post.M0.shape
    if s.shape != (d_s,) or y.shape != (d_s,) or a.size + d_s != d_z:
        raise InvalidArgumentError("observation dimensions do not match the posterior")
    z = np.concatenate([a, s])
    post.Lambda += np.outer(z, z)
    post.YZ += np.outer(y, z)
    post.count += 1
    return post


def psrl_sample_lqr(post: MatrixRegressionPosterior, task: LQRModel, rng) -> LQRModel:
    """Draw ``M = mean + L_S Z L_col^T`` with ``L_col L_col^T = Lambda^-1``."""
    L_row = np.linalg.cholesky(post.noise_cov)
    L_col = np.linalg.cholesky(np.linalg.inv(post.Lambda))
    Z = rng.standard_normal(post.M0.shape)
    M = post.mean + L_row @ Z @ L_col.T
    return LQRModel.trusted(M, task.noise_cov, task.cost_state, task.cost_action)


# -- PSRL loop ----------------------------------------------------------------------

class PSRLAgent:
    """Samples a model from the posterior and plans in it.

    Resampling happens every step by default; with ``psrl_resample =
    "episode"`` it happens at episode boundaries (environment resets, or every
    ``psrl_episode_length`` steps for continuing tasks).
    """

    def __init__(self, env, cfg, rng):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        mdl = env.true_model
        self.kind = env.kind
        if self.kind == "tabular":
            self.post = DirichletPosterior.uniform(mdl.n_states, mdl.n_actions, cfg.dirichlet_alpha)
            self.known = env.reward_mode == "known"
            self.rewards = np.ascontiguousarray(mdl.rewards) if self.known else None
            self.rpost = None if self.known else NormalGammaPosterior.prior(mdl.n_states, mdl.n_actions,
                                                                           cfg.reward_prior_mean)
            self.V = None
        else:
            self.post = MatrixRegressionPosterior.prior(mdl.dim_state, mdl.dim_action, mdl.noise_cov, cfg.mvr_precision)
            self.gain = None
        self.policy = None
        self.model = None
        self.resample = True
        self.steps_in_episode = 0

    def plan(self, t):
        if self.resample or self.policy is None:
            mdl = self.env.true_model
            if self.kind == "tabular":
                self.model = psrl_sample_tabular(self.post, self.rpost, self.rng, self.rewards, mdl.discount)
                self.V, self.policy = value_iteration(self.model, self.cfg.vi_tol, v0=self.V)
            else:
                self.model = psrl_sample_lqr(self.post, mdl, self.rng)
                F = self.model.A if self.cfg.riccati_on_raw_A else self.model.F
                try:
                    if not is_stabilizable(F, self.model.B):
                        raise NotStabilizableError("sampled model is not stabilizable")
                    P0 = None if self.gain is None else self.gain.P
                    self.gain = plan_lqr(self.model, self.cfg.riccati_on_raw_A, self.cfg.riccati_tol,
                                         self.cfg.riccati_max_iter, P0)
                except NotStabilizableError:
                    if self.gain is None:
                        self.gain = LQRGain(np.zeros((mdl.dim_action, mdl.dim_state)), None)
                self.policy = self.gain
            self.resample = self.cfg.psrl_resample == "step"
        return self.policy, {"w": None, "choice": "psrl_sample", "model": self.model}

    def observe(self, s, a, s_next, r, end):
        if self.kind == "tabular":
            dirichlet_update(self.post, s, a, s_next)
            if self.rpost is not None:
                self.rpost.update(s, a, r)
        else:
            mvr_update(self.post, s, a, s_next)
        if self.cfg.psrl_resample == "episode":
            self.steps_in_episode += 1
            if end or (self.env.horizon is None and self.steps_in_episode >= self.cfg.psrl_episode_length):
                self.resample = True
                self.steps_in_episode = 0


def run_psrl(env, T: int, cfg=None, rng=0):
    cfg = cfg or AgentConfig()
    streams = make_streams(rng)
    return run_agent(env, T, PSRLAgent(env, cfg, streams.agent), cfg, streams, "psrl")
