"""Model-based planners: value iteration for tabular MDPs, Riccati iteration for LQRs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, NotStabilizableError
from .models import LQRModel, TabularMDP

VI_TOL = 1e-6
VI_MAX_SWEEPS = 1_000_000
RICCATI_TOL = 1e-9
RICCATI_MAX_ITER = 10_000
# relative residual accepted once the iteration budget is spent (rounding level)
RICCATI_REL_FLOOR = 1e-9
DOUBLING_MAX_ITER = 100
POLISH_MAX_ITER = 2000


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    action: np.ndarray

    def __post_init__(self):
        a = np.array(self.action, dtype=np.int64).ravel()
        if np.any(a < 0):
            raise InvalidArgumentError("policy actions must be non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "action", a)

    def __call__(self, s: int) -> int:
        return int(self.action[s])

    def key(self) -> bytes:
        return self.action.tobytes()

    def __eq__(self, other):
        return isinstance(other, TabularPolicy) and np.array_equal(self.action, other.action)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LQRGain:
    K: np.ndarray
    P: np.ndarray
    iterations: int = 0

    def __call__(self, s) -> np.ndarray:
        return -(self.K @ s)


def _contiguous(model: TabularMDP):
    T = model.transitions
    R = model.rewards
    if not T.flags.c_contiguous:
        T = np.ascontiguousarray(T)
    if not R.flags.c_contiguous:
        R = np.ascontiguousarray(R)
    return T, R


def value_iteration(model: TabularMDP, tol: float = VI_TOL, v0=None):
    """Optimal values and greedy policy.

    Sweeps stop once successive iterates differ by less than
    ``tol * (1 - gamma) / (2 * gamma)`` in sup-norm, which guarantees
    a Bellman residual below ``tol``. Ties go to the lowest action index.
    ``v0`` warm-starts the sweeps and is not modified.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    gamma = model.discount
    T, R = _contiguous(model)
    stop = np.inf if gamma == 0.0 else tol * (1.0 - gamma) / (2.0 * gamma)
    V = np.zeros(model.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    policy, _ = kernels.value_iteration(T, R, gamma, stop, VI_MAX_SWEEPS, V)
    return V, _policy(policy)


def _policy(actions: np.ndarray) -> TabularPolicy:
    obj = object.__new__(TabularPolicy)
    actions.setflags(write=False)
    object.__setattr__(obj, "action", actions)
    return obj


def bellman_residual(model: TabularMDP, V) -> float:
    T, R = _contiguous(model)
    return float(kernels.bellman_residual(T, R, model.discount, np.ascontiguousarray(V, dtype=np.float64)))


def policy_evaluation(model: TabularMDP, pol: TabularPolicy, tol: float = VI_TOL) -> np.ndarray:
    """Exact value of a deterministic policy by a direct linear solve.

    ``tol`` is accepted for interface symmetry; the solve is exact to rounding.
    """
    a = pol.action if isinstance(pol, TabularPolicy) else np.asarray(pol, dtype=np.int64)
    S = model.n_states
    if a.shape != (S,) or np.any(a >= model.n_actions):
        raise InvalidArgumentError("policy does not match the model's state/action spaces")
    idx = np.arange(S)
    P = model.transitions[idx, a]
    r = model.rewards[idx, a]
    return np.linalg.solve(np.eye(S) - model.discount * P, r)


def q_values(model: TabularMDP, V) -> np.ndarray:
    return model.rewards + model.discount * (model.transitions @ V)


# -- LQR ---------------------------------------------------------------------------

def riccati_residual(F, B, Q, R, P) -> np.ndarray:
    FtPB = F.T @ P @ B
    return F.T @ P @ F - P + Q - FtPB @ np.linalg.solve(R + B.T @ P @ B, FtPB.T)


def solve_riccati(F, B, Q, R, tol: float = RICCATI_TOL, max_iter: int = RICCATI_MAX_ITER, P0=None) -> LQRGain:
    """Discrete algebraic Riccati equation by fixed-point iteration.

    Starts from ``P0`` (default ``Q``) and stops when the Frobenius norm of
    the change between iterates is at most ``tol``. The gain satisfies
    ``a = -K s``.

    Barely controllable systems can need far more sweeps than the budget,
    and for large ``P`` an absolute ``tol`` can sit below rounding error.
    If the budget runs out, ``P`` is recomputed by the doubling recursion
    (which reaches iterate ``2^k`` after ``k`` steps) and polished by the
    same fixed-point sweeps; the result is accepted once the change is at
    most ``tol`` or ``RICCATI_REL_FLOOR * |P|_F``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n = F.shape[0]
    if F.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise InvalidArgumentError("incompatible Riccati matrix shapes")
    P = np.array(Q if P0 is None else P0, dtype=np.float64, order="C")
    if P.shape != (n, n):
        raise InvalidArgumentError("warm start P0 has the wrong shape")
    F, B, Q, R = (np.ascontiguousarray(x) for x in (F, B, Q, R))
    K, it, res_norm, ok = kernels.riccati_iterate(F, B, Q, R, P, float(tol), int(max_iter))
    if ok:
        return LQRGain(np.asarray(K), P, int(it))
    total = int(it)
    if np.isfinite(res_norm) and np.all(np.isfinite(P)):
        X = _doubling(F, B, Q, R)
        if X is not None:
            P = X
            K, it, res_norm, ok = kernels.riccati_iterate(F, B, Q, R, P, float(tol), POLISH_MAX_ITER)
            total += int(it)
            if ok:
                return LQRGain(np.asarray(K), P, total)
            if np.isfinite(res_norm) and res_norm <= RICCATI_REL_FLOOR * np.linalg.norm(P):
                return LQRGain(np.linalg.solve(R + B.T @ P @ B, B.T @ P @ F), P, total)
    raise NotStabilizableError(
        f"Riccati iteration did not converge in {max_iter} iterations (residual {res_norm:.3e})",
        residual=res_norm,
        iterations=max_iter,
    )


def _doubling(F, B, Q, R):
    """Doubling recursion for the DARE; ``None`` if it breaks down or stalls."""
    n = F.shape[0]
    A, G, H = F.copy(), B @ np.linalg.solve(R, B.T), Q.copy()
    eye = np.eye(n)
    with np.errstate(all="ignore"):
        for _ in range(DOUBLING_MAX_ITER):
            try:
                W = eye + G @ H
                WA = np.linalg.solve(W, A)
                WG = np.linalg.solve(W, G)
            except np.linalg.LinAlgError:
                return None
            H_next = H + A.T @ H @ WA
            G = G + A @ WG @ A.T
            A = A @ WA
            H_next = 0.5 * (H_next + H_next.T)
            G = 0.5 * (G + G.T)
            if not np.all(np.isfinite(H_next)):
                return None
            step = np.linalg.norm(H_next - H)
            H = H_next
            if step <= 1e-15 * max(1.0, np.linalg.norm(H)):
                return np.ascontiguousarray(H)
    return None


def plan_lqr(model: LQRModel, riccati_on_raw_A: bool = False, tol: float = RICCATI_TOL,
             max_iter: int = RICCATI_MAX_ITER, P0=None) -> LQRGain:
    """Optimal gain for ``model``.

    Planning uses the one-step map ``F = I + A`` of the increment dynamics;
    ``riccati_on_raw_A`` runs the recursion on ``A`` itself instead.
    """
    F = model.A if riccati_on_raw_A else model.F
    return solve_riccati(F, model.B, model.cost_state, model.cost_action, tol, max_iter, P0)


def closed_loop(model: LQRModel, gain: LQRGain) -> np.ndarray:
    return model.F - model.B @ gain.K


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def lqr_value(model: LQRModel, gain: LQRGain, s0, horizon: int) -> float:
    """Quadratic cost of the noiseless closed loop over ``horizon`` steps."""
    s = np.array(s0, dtype=np.float64).ravel()
    if s.shape != (model.dim_state,):
        raise InvalidArgumentError("start state has the wrong dimension")
    F, B, Q, R, K = model.F, model.B, model.cost_state, model.cost_action, gain.K
    total = 0.0
    for _ in range(horizon):
        a = -(K @ s)
        total += float(s @ Q @ s + a @ R @ a)
        s = F @ s + B @ a
    return total


def finite_horizon_cost_matrix(model: LQRModel, K, horizon: int) -> np.ndarray:
    """Matrix ``P_H`` with ``s0^T P_H s0`` equal to ``lqr_value`` over ``horizon`` steps.

    A cost that overflows double precision is returned as ``inf`` everywhere.
    """
    Fc = model.F - model.B @ K
    C = model.cost_state + K.T @ model.cost_action @ K
    P = np.zeros_like(C)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(horizon):
            P = C + Fc.T @ P @ Fc
            if not np.all(np.isfinite(P)):
                return np.full_like(C, np.inf)
    return P
