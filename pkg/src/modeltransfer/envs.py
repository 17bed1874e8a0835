"""Benchmark environments: Chain, a linearized cart-pole and random LQR tasks.

Chain follows Dearden et al.: action 0 moves one state forward (staying
put at the far end), action 1 returns to the start. With probability
``slip`` the other action's effect happens instead. Rewards belong to the
chosen action, so every slip value shares one reward table: 10 for moving
forward in the last state, 2 for returning, 0 otherwise, all divided by 10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import kernels
from .errors import GenerationError, InvalidArgumentError
from .models import LQRModel, TabularMDP

FORWARD, RETURN = 0, 1


@dataclass(eq=False)
class Environment:
    """A target task. ``true_model`` is visible to the harness only."""

    kind: str
    true_model: object
    initial_state: object = 0
    horizon: Optional[int] = None
    reward_mode: str = "known"
    reward_noise: float = 0.0
    init_scale: float = 1.0
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("tabular", "lqr"):
            raise InvalidArgumentError(f"unknown environment kind {self.kind!r}")
        if self.reward_mode not in ("known", "learned"):
            raise InvalidArgumentError(f"reward_mode must be 'known' or 'learned', got {self.reward_mode!r}")
        if self.kind == "tabular":
            self._cdf = np.ascontiguousarray(np.cumsum(self.true_model.transitions, axis=2))
        else:
            self._noise_chol = np.linalg.cholesky(self.true_model.noise_cov)

    def reset(self, rng):
        if self.kind == "tabular":
            return int(self.initial_state)
        return self.init_scale * rng.standard_normal(self.true_model.dim_state)

    def with_model(self, model) -> "Environment":
        """Same protocol, different true model."""
        return Environment(self.kind, model, self.initial_state, self.horizon, self.reward_mode,
                           self.reward_noise, self.init_scale, dict(self.spec))


def env_step(env: Environment, s, a, rng):
    """One interaction with the true model: returns ``(s_next, reward)``."""
    mdl = env.true_model
    if env.kind == "tabular":
        S, A = mdl.n_states, mdl.n_actions
        if not (0 <= s < S) or not (0 <= a < A):
            raise InvalidArgumentError(f"invalid state/action ({s}, {a})")
        s_next = kernels.sample_categorical(env._cdf[s, a], rng.random())
        r = float(mdl.rewards[s, a])
        if env.reward_mode == "learned" and env.reward_noise > 0:
            r += env.reward_noise * rng.standard_normal()
        return int(s_next), r
    s = np.asarray(s, dtype=np.float64)
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if s.shape != (mdl.dim_state,) or a.shape != (mdl.dim_action,):
        raise InvalidArgumentError("state/action dimension mismatch")
    cost = float(s @ mdl.cost_state @ s + a @ mdl.cost_action @ a)
    s_next = s + mdl.A @ s + mdl.B @ a + env._noise_chol @ rng.standard_normal(mdl.dim_state)
    return s_next, -cost


# -- Chain ----------------------------------------------------------------------

def chain_mdp(n_states: int = 5, slip: float = 0.0, discount: float = 0.95,
              forward_reward: float = 10.0, return_reward: float = 2.0) -> TabularMDP:
    if n_states < 2:
        raise InvalidArgumentError("chain needs at least two states")
    if not 0.0 <= slip <= 1.0:
        raise InvalidArgumentError(f"slip must lie in [0, 1], got {slip}")
    S = n_states
    T = np.zeros((S, 2, S))
    for s in range(S):
        fwd = min(s + 1, S - 1)
        T[s, FORWARD, fwd] += 1.0 - slip
        T[s, FORWARD, 0] += slip
        T[s, RETURN, 0] += 1.0 - slip
        T[s, RETURN, fwd] += slip
    scale = max(forward_reward, return_reward)
    R = np.zeros((S, 2))
    R[S - 1, FORWARD] = forward_reward / scale
    R[:, RETURN] = return_reward / scale
    return TabularMDP(T, R, discount)


def make_chain(n_states: int = 5, slip: float = 0.0, reward_mode: str = "known",
               discount: float = 0.95, reward_noise: float = 0.1) -> Environment:
    mdl = chain_mdp(n_states, slip, discount)
    spec = {"kind": "chain", "n_states": n_states, "slip": slip, "discount": discount}
    return Environment("tabular", mdl, 0, None, reward_mode, reward_noise if reward_mode == "learned" else 0.0, spec=spec)


def tabular_environment(model: TabularMDP, reward_mode: str = "known", reward_noise: float = 0.1,
                        initial_state: int = 0) -> Environment:
    return Environment("tabular", model, initial_state, None, reward_mode,
                       reward_noise if reward_mode == "learned" else 0.0, spec={"kind": "tabular"})


# -- cart-pole --------------------------------------------------------------------

def cartpole_matrices(gravity=9.8, mass_cart=1.0, mass_pole=0.1, pole_length=0.5):
    """Continuous-time linearization about the upright pole.

    State (x, x_dot, theta, theta_dot), input the horizontal force. Uses the
    Barto et al. equations with ``pole_length`` the half-length of a uniform
    pole, linearized at theta = 0.
    """
    for name, v in (("gravity", gravity), ("mass_cart", mass_cart), ("mass_pole", mass_pole), ("pole_length", pole_length)):
        if not v > 0:
            raise InvalidArgumentError(f"{name} must be positive")
    total = mass_cart + mass_pole
    denom = pole_length * (4.0 / 3.0 - mass_pole / total)
    th_th = gravity / denom
    th_u = -1.0 / (total * denom)
    x_th = -mass_pole * pole_length * th_th / total
    x_u = 1.0 / total - mass_pole * pole_length * th_u / total
    Ac = np.array([[0.0, 1.0, 0.0, 0.0],
                   [0.0, 0.0, x_th, 0.0],
                   [0.0, 0.0, 0.0, 1.0],
                   [0.0, 0.0, th_th, 0.0]])
    Bc = np.array([[0.0], [x_u], [0.0], [th_u]])
    return Ac, Bc


def cartpole_lqr(gravity=9.8, mass_cart=1.0, mass_pole=0.1, pole_length=0.5, dt=0.02,
                 noise_var=1e-4, cost_action=1.0) -> LQRModel:
    """Forward-Euler discretization in increment form: ``s' - s = dt Ac s + dt Bc a``."""
    Ac, Bc = cartpole_matrices(gravity, mass_cart, mass_pole, pole_length)
    return LQRModel.from_dynamics(dt * Ac, dt * Bc, noise_var * np.eye(4), np.eye(4), cost_action * np.eye(1))


def make_cartpole_lqr(gravity=9.8, mass_cart=1.0, mass_pole=0.1, pole_length=0.5, dt=0.02,
                      noise_var=1e-4, horizon=200, init_scale=0.1) -> Environment:
    mdl = cartpole_lqr(gravity, mass_cart, mass_pole, pole_length, dt, noise_var)
    spec = {"kind": "cartpole", "gravity": gravity, "mass_cart": mass_cart, "mass_pole": mass_pole,
            "pole_length": pole_length, "dt": dt, "noise_var": noise_var}
    return Environment("lqr", mdl, "normal", horizon, "known", 0.0, init_scale, spec)


# -- random LQR ----------------------------------------------------------------------

def is_stabilizable(F, B, tol: float = 1e-9) -> bool:
    """PBH test on every eigenvalue of ``F`` outside the open unit disc."""
    n = F.shape[0]
    for lam in np.linalg.eigvals(F):
        if abs(lam) >= 1.0 - tol:
            M = np.hstack([F - lam * np.eye(n), B]).astype(complex)
            if np.linalg.matrix_rank(M, tol=1e-8) < n:
                return False
    return True


def random_lqr(d_s: int, d_a: int, stiffness_seed: int, noise_var: float = 1e-2,
               rho_max: float = 2.0, max_tries: int = 100) -> LQRModel:
    """Random stabilizable increment dynamics, deterministic in the seed.

    ``A`` has entries uniform in [-0.5, 0.5] times a stiffness factor drawn
    from [0.5, 2], divided by sqrt(d_s) so the spectrum of ``I + A`` stays
    O(1) as the dimension grows; ``B`` is Gaussian with the same scaling.
    Candidates whose one-step map is too unstable or not stabilizable are
    rejected.
    """
    if d_s < 1 or d_a < 1:
        raise InvalidArgumentError("d_s and d_a must be positive")
    rng = np.random.default_rng(stiffness_seed)
    scale = 1.0 / math.sqrt(d_s)
    for _ in range(max_tries):
        stiffness = rng.uniform(0.5, 2.0)
        A = stiffness * scale * rng.uniform(-0.5, 0.5, size=(d_s, d_s))
        B = scale * rng.standard_normal((d_s, d_a))
        F = np.eye(d_s) + A
        if np.max(np.abs(np.linalg.eigvals(F))) > rho_max:
            continue
        if not is_stabilizable(F, B):
            continue
        return LQRModel.from_dynamics(A, B, noise_var * np.eye(d_s), np.eye(d_s), np.eye(d_a))
    raise GenerationError(f"no stabilizable ({d_s}, {d_a}) system in {max_tries} draws for seed {stiffness_seed}")


def make_random_lqr(d_s: int, d_a: int, stiffness_seed: int, noise_var: float = 1e-2,
                    horizon: int = 200, init_scale: float = 1.0) -> Environment:
    mdl = random_lqr(d_s, d_a, stiffness_seed, noise_var)
    spec = {"kind": "random_lqr", "d_s": d_s, "d_a": d_a, "stiffness_seed": stiffness_seed, "noise_var": noise_var}
    return Environment("lqr", mdl, "normal", horizon, "known", 0.0, init_scale, spec)


def lqr_environment(model: LQRModel, horizon: int = 200, init_scale: float = 1.0) -> Environment:
    return Environment("lqr", model, "normal", horizon, "known", 0.0, init_scale, {"kind": "lqr"})
