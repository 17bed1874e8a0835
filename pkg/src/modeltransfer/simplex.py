"""Maximization of smooth objectives over the probability simplex.

The solver is projected gradient ascent with an Armijo backtracking search
along the projection arc ``w(t) = proj(w + t g)``. Every iterate is
feasible and accepted steps never decrease the objective. At a reported
optimum the projected gradient ``proj(w + g) - w`` vanishes, which is the
KKT condition of the Lagrangian with multipliers for ``w >= 0`` and
``sum(w) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, NumericalError
from .models import SIMPLEX_ATOL, MixtureWeights

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP = 1e-30


@dataclass
class SimplexProblem:
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dim: int = 0
    value_and_gradient: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgumentError("problem dimension must be positive")

    @classmethod
    def from_objective(cls, obj, dim: int) -> "SimplexProblem":
        """Wrap an object exposing ``value``, ``gradient`` and ``value_and_gradient``."""
        return cls(obj.value, obj.gradient, dim, getattr(obj, "value_and_gradient", None))

    def grad(self, w):
        if self.gradient is not None:
            return np.asarray(self.gradient(w), dtype=np.float64)
        return finite_difference_gradient(self.objective, w)

    def value_grad(self, w):
        if self.value_and_gradient is not None:
            f, g = self.value_and_gradient(w)
            return float(f), np.asarray(g, dtype=np.float64)
        return float(self.objective(w)), self.grad(w)


@dataclass
class OptimizerReport:
    w_star: MixtureWeights
    f_star: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def finite_difference_gradient(f, w, h: float = 1e-6) -> np.ndarray:
    """Central differences in the ambient coordinates."""
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def project_to_simplex(v) -> MixtureWeights:
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("cannot project a non-finite vector")
    return MixtureWeights(_project(v))


def _project(v: np.ndarray) -> np.ndarray:
    w = kernels.project_simplex(v)
    # one renormalisation keeps sum(w) = 1 to rounding
    s = w.sum()
    if not s > 0.0:
        # |v| so large that v - theta cancels everywhere: the limit is a vertex
        w = np.zeros_like(v)
        w[int(np.argmax(v))] = 1.0
    elif s != 1.0:
        w = w / s
    return w


def _check(f, what="objective"):
    if math.isnan(f):
        raise NumericalError(f"{what} evaluated to NaN")


def maximize_on_simplex(
    problem: SimplexProblem,
    w0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    record: bool = False,
) -> OptimizerReport:
    """Projected-gradient ascent from a feasible ``w0``.

    Convergence is declared when an accepted step moves w by less than
    ``tol`` in sup-norm, or when the projected gradient is below ``tol``.
    Hitting ``max_iter`` returns ``converged=False``.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    w = np.array(MixtureWeights(np.asarray(w0, dtype=np.float64)).w)
    if w.size != problem.dim:
        raise InvalidArgumentError(f"w0 has {w.size} entries for a {problem.dim}-dimensional problem")

    f, g = problem.value_grad(w)
    _check(f)
    history = [(w.copy(), f)] if record else []
    if w.size == 1:
        return OptimizerReport(MixtureWeights(w), f, 0, True, history)

    step = 1.0 / max(float(np.max(np.abs(g))), 1.0)
    converged = False
    it = 0
    while it < max_iter:
        if not np.all(np.isfinite(g)):
            raise NumericalError("gradient is not finite")
        pg = _project(w + g) - w
        if np.max(np.abs(pg)) < tol:
            converged = True
            break
        it += 1
        t = step
        accepted = False
        while t > MIN_STEP:
            w_new = _project(w + t * g)
            d = w_new - w
            if not np.any(d):
                break
            f_new = problem.objective(w_new)
            _check(f_new)
            if f_new >= f + ARMIJO_C * float(g @ d):
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            # no ascent along the arc at machine precision: stationary
            converged = True
            break
        moved = float(np.max(np.abs(d)))
        w, f = w_new, float(f_new)
        if record:
            history.append((w.copy(), f))
        step = t * 2.0
        if moved < tol:
            converged = True
            break
        f_chk, g = problem.value_grad(w)
        f = f_chk
    return OptimizerReport(MixtureWeights(w), float(f), it, converged, history)


def maximize_mixture(P, counts, w0, floor: float, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> OptimizerReport:
    """Fast path of :func:`maximize_on_simplex` for the tabular mixture likelihood.

    Runs the identical iteration inside the kernel backend; ``P`` is the
    (cells, m) matrix of source probabilities and ``counts`` the cell counts.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    w = np.array(MixtureWeights(np.asarray(w0, dtype=np.float64)).w)
    if w.size != P.shape[1]:
        raise InvalidArgumentError(f"w0 has {w.size} entries for {P.shape[1]} sources")
    f, it, conv = kernels.mixture_ascent(P, counts, w, floor, tol, max_iter, ARMIJO_C, BACKTRACK, MIN_STEP)
    _check(f)
    return OptimizerReport(MixtureWeights(w), float(f), int(it), bool(conv))


def is_feasible(w, atol: float = SIMPLEX_ATOL) -> bool:
    w = np.asarray(w, dtype=np.float64)
    return bool(np.all(w >= -1e-12) and abs(w.sum() - 1.0) <= atol)


EXACT_QP_MAX_DIM = 12


def _face_candidates(H: np.ndarray, b: np.ndarray):
    # stationary point of the concave quadratic on the affine hull of every face
    m = b.size
    for mask in range(1, 1 << m):
        idx = [i for i in range(m) if mask >> i & 1]
        k = len(idx)
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = H[np.ix_(idx, idx)]
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.append(b[idx], 1.0)
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
        if np.all(sol >= -1e-12):
            w = np.zeros(m)
            w[idx] = np.maximum(sol, 0.0)
            s = w.sum()
            if s > 0:
                yield w / s


def maximize_quadratic_on_simplex(H, b, w0, c: float = 0.0, tol: float = DEFAULT_TOL,
                                  max_iter: int = DEFAULT_MAX_ITER) -> OptimizerReport:
    """Maximize ``c + b^T w - 0.5 w^T H w`` (H symmetric PSD) over the simplex.

    For up to ``EXACT_QP_MAX_DIM`` sources the optimum is found exactly by
    solving the KKT system on every face and keeping the best feasible
    stationary point; projected-gradient ascent then starts from the better
    of that point and ``w0``, so the result never scores below ``w0`` and
    still carries the projected-gradient convergence certificate. Larger
    problems go straight to projected-gradient ascent.
    """
    H = np.asarray(H, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    m = b.size
    if H.shape != (m, m):
        raise InvalidArgumentError("H must be square and match b")

    def value(w):
        return c + float(b @ w) - 0.5 * float(w @ H @ w)

    def vg(w):
        Hw = H @ w
        return c + float(b @ w) - 0.5 * float(w @ Hw), b - Hw

    start = np.array(MixtureWeights(np.asarray(w0, dtype=np.float64)).w)
    if start.size != m:
        raise InvalidArgumentError(f"w0 has {start.size} entries for a {m}-dimensional problem")
    if 1 < m <= EXACT_QP_MAX_DIM and np.all(np.isfinite(H)) and np.all(np.isfinite(b)):
        best_f = value(start)
        for w in _face_candidates(H, b):
            f = value(w)
            if f > best_f:
                start, best_f = w, f
    return maximize_on_simplex(SimplexProblem(value, lambda w: vg(w)[1], m, vg), start, tol, max_iter)
