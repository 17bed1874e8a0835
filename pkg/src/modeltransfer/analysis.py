"""Model distances, the realisability gap, regret and the bound calculators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .likelihood import PROB_FLOOR, CountTable, TabularMixtureObjective
from .models import LQRModel, MixtureWeights, SourceSet, TabularMDP
from .planning import (LQRGain, TabularPolicy, finite_horizon_cost_matrix, plan_lqr,
                       policy_evaluation, q_values, value_iteration)
from .simplex import SimplexProblem, maximize_on_simplex, maximize_quadratic_on_simplex

GAP_ETAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
LQR_REGRET_STARTS = 64
LQR_REGRET_SEED = 0
LQR_REGRET_HORIZON = 200


@dataclass(frozen=True)
class ModelDistance:
    """``partition`` is the k = 1 homogeneous-partition norm; ``summed`` the per-(s, a) L1."""

    partition: float
    summed: float


def _same_shape(m1, m2):
    if type(m1) is not type(m2):
        raise InvalidArgumentError("models are of different kinds")
    if isinstance(m1, LQRModel):
        if m1.mean.shape != m2.mean.shape:
            raise InvalidArgumentError(f"model shapes differ: {m1.mean.shape} vs {m2.mean.shape}")
        return
    if m1.transitions.shape != m2.transitions.shape:
        raise InvalidArgumentError(f"model shapes differ: {m1.transitions.shape} vs {m2.transitions.shape}")


def l1_model_distance(m1: TabularMDP, m2: TabularMDP) -> ModelDistance:
    if not isinstance(m1, TabularMDP):
        raise InvalidArgumentError("L1 model distance is defined for tabular models")
    _same_shape(m1, m2)
    D = m1.transitions - m2.transitions
    partition = float(np.max(np.sum(np.abs(D.sum(axis=0)), axis=-1)))
    return ModelDistance(partition, float(np.abs(D).sum()))


def l1_summed(T1, T2) -> float:
    return float(np.abs(np.asarray(T1) - np.asarray(T2)).sum())


def kl_model_divergence(m1, m2) -> float:
    """KL(m1 || m2) between transition laws.

    Tabular: sum over (s, a) of the row divergences, second argument floored
    at 1e-12. LQR: divergence between the Gaussian next-state laws averaged
    over regressors ``z = (a, s)`` with second moment I, i.e.
    ``0.5 * (tr(S2^-1 S1) - d + log det S2 / det S1 + tr(S2^-1 D D^T))``
    with ``D`` the difference of the mean matrices.
    """
    _same_shape(m1, m2)
    if isinstance(m1, LQRModel):
        S2inv = np.linalg.inv(m2.noise_cov)
        D = m1.mean - m2.mean
        d = m1.dim_state
        logdet = np.linalg.slogdet(m2.noise_cov)[1] - np.linalg.slogdet(m1.noise_cov)[1]
        return 0.5 * float(np.sum(S2inv * m1.noise_cov) - d + logdet + np.sum(S2inv * (D @ D.T)))
    P = m1.transitions
    Q = np.maximum(m2.transitions, PROB_FLOOR)
    mask = P > 0
    return float(np.sum(P[mask] * (np.log(P[mask]) - np.log(Q[mask]))))


# -- realisability gap ------------------------------------------------------------

def _smoothed_l1_problem(P: np.ndarray, target: np.ndarray, eta: float) -> SimplexProblem:
    # maximize -sum sqrt(r^2 + eta^2) with r = target - P w
    def vg(w):
        r = target - P @ w
        root = np.sqrt(r * r + eta * eta)
        return -float(root.sum()), (r / root) @ P

    return SimplexProblem(lambda w: vg(w)[0], lambda w: vg(w)[1], P.shape[1], vg)


def realisability_gap(sources: SourceSet, target, tol: float = 1e-10, max_iter: int = 2000):
    """Distance from ``target`` to the convex hull of ``sources`` and the minimizer.

    Tabular: per-(s, a) summed L1 between kernels. The absolute value is
    smoothed as sqrt(r^2 + eta^2) and eta is driven to 1e-8 by continuation,
    each stage warm-started from the last; the exact L1 is reported at the
    final weights. LQR: Frobenius distance between mean matrices.
    """
    m = sources.m
    w0 = MixtureWeights.uniform(m)
    if isinstance(target, TabularMDP):
        if sources.kind != "tabular":
            raise InvalidArgumentError("tabular target needs tabular sources")
        if target.transitions.shape != sources.models[0].transitions.shape:
            raise InvalidArgumentError("target shape does not match the sources")
        P = sources.flat_transitions
        tgt = target.transitions.ravel()
        w = w0
        # candidates: every vertex plus the continuation path; keep the best exact value
        best_w, best = None, np.inf
        for i in range(m):
            val = float(np.abs(tgt - P[:, i]).sum())
            if val < best:
                best_w, best = MixtureWeights.one_hot(m, i), val
        for eta in GAP_ETAS:
            rep = maximize_on_simplex(_smoothed_l1_problem(P, tgt, eta), w, tol=tol, max_iter=max_iter)
            w = rep.w_star
        val = float(np.abs(tgt - P @ w.w).sum())
        if val <= best:
            best_w, best = w, val
        return best, best_w
    if isinstance(target, LQRModel):
        if sources.kind != "lqr":
            raise InvalidArgumentError("LQR target needs LQR sources")
        Ms = sources.stacked_means.reshape(m, -1).T
        if Ms.shape[0] != target.mean.size:
            raise InvalidArgumentError("target shape does not match the sources")
        tgt = target.mean.ravel()
        G = Ms.T @ Ms
        h = Ms.T @ tgt

        # -|tgt - Ms w|^2 = -|tgt|^2 + 2 h^T w - w^T G w
        rep = maximize_quadratic_on_simplex(2.0 * G, 2.0 * h, w0, -float(tgt @ tgt), tol, max_iter)
        r = tgt - Ms @ rep.w_star.w
        return float(np.sqrt(r @ r)), rep.w_star
    raise InvalidArgumentError(f"unsupported target type {type(target).__name__}")


def best_kl_proxy(sources: SourceSet, target, tol: float = 1e-10):
    """Hull point minimizing KL(target || mixture).

    Tabular: the mixture likelihood with the target kernel as fractional
    counts. LQR (shared noise covariance S): the quadratic
    ``tr(S^-1 D D^T)`` in the mixed mean, solved exactly.
    Returns ``(kl, weights, proxy_model)``.
    """
    if isinstance(target, LQRModel):
        if sources.kind != "lqr":
            raise InvalidArgumentError("LQR target needs LQR sources")
        Si = np.linalg.inv(sources.models[0].noise_cov)
        Ms = sources.stacked_means
        SiM = np.einsum("ij,mjk->mik", Si, Ms)
        H = np.einsum("mik,nik->mn", SiM, Ms)
        b = np.einsum("mik,ik->m", SiM, target.mean)
        rep = maximize_quadratic_on_simplex(0.5 * (H + H.T), b, MixtureWeights.uniform(sources.m), tol=tol,
                                            max_iter=2000)
        M = np.tensordot(rep.w_star.w, Ms, axes=1)
        first = sources.models[0]
        proxy = LQRModel.trusted(M, first.noise_cov, target.cost_state, target.cost_action)
        return kl_model_divergence(target, proxy), rep.w_star, proxy
    obj = TabularMixtureObjective(sources, target.transitions.ravel())
    rep = maximize_on_simplex(SimplexProblem.from_objective(obj, sources.m), MixtureWeights.uniform(sources.m),
                              tol=tol, max_iter=2000)
    T = sources.stacked_transitions @ rep.w_star.w
    proxy = TabularMDP.trusted(T, target.rewards, target.discount)
    return kl_model_divergence(target, proxy), rep.w_star, proxy


# -- bounds -----------------------------------------------------------------------

def performance_gap_bound(eps_estim: float, eps_realise: float, gamma: float) -> float:
    """3 (eps_estim + eps_realise) / (1 - gamma)^2."""
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in [0, 1), got {gamma}")
    if eps_estim < 0 or eps_realise < 0:
        raise InvalidArgumentError("error terms must be non-negative")
    return 3.0 * (eps_estim + eps_realise) / (1.0 - gamma) ** 2


def _log_support_term(S: int) -> float:
    # log(2^S - 2) without forming 2^S
    return S * math.log(2.0) + math.log1p(-2.0 ** (1 - S))


def weissman_cell_bound(n: int, S: int, delta: float) -> float:
    """L1 deviation radius of an n-sample empirical distribution on S outcomes.

    Cells with n = 0 get the vacuous value 2; S = 1 has no deviation.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")
    if S < 2:
        return 0.0
    if n <= 0:
        return 2.0
    return math.sqrt(2.0 * (_log_support_term(S) - math.log(delta)) / n)


def weissman_bound(counts, S: int, delta: float) -> float:
    n = counts.n if isinstance(counts, CountTable) else np.asarray(counts)
    return float(sum(weissman_cell_bound(int(k), S, delta) for k in np.ravel(n)))


# -- regret -----------------------------------------------------------------------

def optimal_values(model: TabularMDP):
    """Exact optimal values: value iteration, then policy iteration to a fixed point."""
    _, pol = value_iteration(model, tol=1e-10)
    a = np.array(pol.action)
    for _ in range(100):
        V = policy_evaluation(model, a)
        Q = q_values(model, V)
        cur = Q[np.arange(model.n_states), a]
        best = Q.argmax(axis=1)
        improve = Q[np.arange(model.n_states), best] > cur + 1e-12 * (1.0 + np.abs(cur))
        if not improve.any():
            return V, TabularPolicy(a)
        a = np.where(improve, best, a)
    return policy_evaluation(model, a), TabularPolicy(a)


class RegretOracle:
    """Regret of policies in a fixed true model, with per-policy caching.

    Tabular: max over start states of V* - V^pi. LQR: mean over fixed
    standard-normal starts of the ``horizon``-step noiseless cost under the
    candidate gain minus that under the true-model Riccati gain.
    """

    def __init__(self, true_model, horizon: int = LQR_REGRET_HORIZON, n_starts: int = LQR_REGRET_STARTS,
                 seed: int = LQR_REGRET_SEED, riccati_on_raw_A: bool = False):
        self.model = true_model
        self._cache = {}
        if isinstance(true_model, TabularMDP):
            self.v_star, self.policy_star = optimal_values(true_model)
        elif isinstance(true_model, LQRModel):
            self.horizon = horizon
            starts = np.random.default_rng(seed).standard_normal((n_starts, true_model.dim_state))
            self.second_moment = starts.T @ starts / n_starts
            self.gain_star = plan_lqr(true_model, riccati_on_raw_A)
            self.cost_star = self._lqr_cost(self.gain_star.K)
        else:
            raise InvalidArgumentError(f"unsupported model type {type(true_model).__name__}")

    def _lqr_cost(self, K) -> float:
        P = finite_horizon_cost_matrix(self.model, K, self.horizon)
        if not np.all(np.isfinite(P)):
            return math.inf
        return float(np.sum(P * self.second_moment))

    def __call__(self, policy) -> float:
        if isinstance(self.model, TabularMDP):
            a = policy.action if isinstance(policy, TabularPolicy) else np.asarray(policy, dtype=np.int64)
            key = a.tobytes()
            r = self._cache.get(key)
            if r is None:
                r = float(np.max(self.v_star - policy_evaluation(self.model, a)))
                self._cache[key] = r
            return r
        K = policy.K if isinstance(policy, LQRGain) else np.atleast_2d(np.asarray(policy, dtype=np.float64))
        if K.shape != (self.model.dim_action, self.model.dim_state):
            raise InvalidArgumentError("gain shape does not match the model")
        key = K.tobytes()
        r = self._cache.get(key)
        if r is None:
            r = self._lqr_cost(K) - self.cost_star
            if len(self._cache) < 4096:
                self._cache[key] = r
        return r


def regret_of_policy(true_model, policy, **kwargs) -> float:
    return RegretOracle(true_model, **kwargs)(policy)
