"""Transition data, sufficient statistics and log-likelihoods.

The tabular likelihood drops the multinomial coefficient, which does not
depend on the model and therefore leaves every argmax unchanged. Model
probabilities are floored at ``PROB_FLOOR`` inside logarithms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, NumericalError
from .models import LQRModel, SourceSet, TabularMDP, as_weights

PROB_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TransitionDataset:
    """Ordered (s, a, s_next, r) records.

    Tabular records hold integer indices; LQR records hold 1-d arrays.
    """

    records: list = field(default_factory=list)

    def append(self, s, a, s_next, r):
        self.records.append((s, a, s_next, r))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for s, a, sn, r in self.records:
                fh.write(json.dumps({"s": _plain(s), "a": _plain(a), "s_next": _plain(sn), "r": float(r)}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TransitionDataset":
        data = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            data.append(_unplain(d["s"]), _unplain(d["a"]), _unplain(d["s_next"]), float(d["r"]))
        return data


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.integer):
        return int(x)
    return x


def _unplain(x):
    return np.asarray(x, dtype=np.float64) if isinstance(x, list) else x


class CountTable:
    """Visit counts ``n[s, a]`` and successor counts ``x[s, a, s']``."""

    def __init__(self, n_states: int, n_actions: int):
        self.x = np.zeros((n_states, n_actions, n_states), dtype=np.int64)
        self.n = np.zeros((n_states, n_actions), dtype=np.int64)

    @property
    def shape(self):
        return self.x.shape

    def add(self, s: int, a: int, s_next: int) -> None:
        self.x[s, a, s_next] += 1
        self.n[s, a] += 1

    def copy(self) -> "CountTable":
        out = CountTable(self.x.shape[0], self.x.shape[1])
        out.x[...] = self.x
        out.n[...] = self.n
        return out


def count_statistics(data, n_states: int, n_actions: int) -> CountTable:
    table = CountTable(n_states, n_actions)
    for rec in data:
        s, a, sn = (int(v) for v in rec[:3])
        if not (0 <= s < n_states and 0 <= sn < n_states):
            raise InvalidArgumentError(f"state index out of range in record {rec!r}")
        if not 0 <= a < n_actions:
            raise InvalidArgumentError(f"action index out of range in record {rec!r}")
        table.add(s, a, sn)
    return table


def log_lik_tabular(counts: CountTable, model: TabularMDP) -> float:
    x = counts.x if isinstance(counts, CountTable) else np.asarray(counts)
    if x.shape != model.transitions.shape:
        raise InvalidArgumentError(f"count shape {x.shape} does not match model {model.transitions.shape}")
    mask = x > 0
    return float(np.sum(x[mask] * np.log(np.maximum(model.transitions[mask], PROB_FLOOR))))


def _noise_factor(noise_cov):
    try:
        L = np.linalg.cholesky(noise_cov)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(noise_cov)
        raise NumericalError(f"noise covariance is not positive definite (condition number {cond:.3e})") from None
    return L


def lqr_residual(model: LQRModel, s, a, s_next) -> np.ndarray:
    z = np.concatenate([np.atleast_1d(a), np.atleast_1d(s)])
    return np.atleast_1d(s_next) - np.atleast_1d(s) - model.mean @ z


def log_lik_lqr(data, model: LQRModel) -> float:
    """Gaussian log-likelihood of the increments ``s' - s`` under ``model``."""
    L = _noise_factor(model.noise_cov)
    d = model.dim_state
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    total = 0.0
    for s, a, sn, *_ in data:
        v = lqr_residual(model, s, a, sn)
        if v.shape != (d,):
            raise InvalidArgumentError(f"record dimension {v.shape} does not match d_s={d}")
        u = np.linalg.solve(L, v)
        total += -0.5 * float(u @ u) - 0.5 * d * LOG_2PI - 0.5 * logdet
    return total


class LQRStats:
    """Running second-moment statistics of (z, y) with z = (a, s), y = s' - s."""

    def __init__(self, dim_state: int, dim_action: int):
        dz = dim_state + dim_action
        self.dim_state = dim_state
        self.dim_action = dim_action
        self.count = 0
        self.zz = np.zeros((dz, dz))
        self.yz = np.zeros((dim_state, dz))
        self.yy = np.zeros((dim_state, dim_state))

    def add(self, s, a, s_next) -> None:
        z = np.concatenate([np.atleast_1d(a), np.atleast_1d(s)])
        y = np.atleast_1d(s_next) - np.atleast_1d(s)
        self.count += 1
        self.zz += np.outer(z, z)
        self.yz += np.outer(y, z)
        self.yy += np.outer(y, y)

    @classmethod
    def from_data(cls, data, dim_state: int, dim_action: int) -> "LQRStats":
        st = cls(dim_state, dim_action)
        for s, a, sn, *_ in data:
            st.add(s, a, sn)
        return st

    def residual_scatter(self, mean: np.ndarray) -> np.ndarray:
        """Sum of v v^T over the data for residuals under ``mean``."""
        cross = mean @ self.yz.T
        return self.yy - cross - cross.T + mean @ self.zz @ mean.T

    def log_lik(self, model: LQRModel) -> float:
        L = _noise_factor(model.noise_cov)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        Sinv = np.linalg.inv(model.noise_cov)
        quad = float(np.sum(Sinv * self.residual_scatter(model.mean)))
        return -0.5 * quad - self.count * (0.5 * self.dim_state * LOG_2PI + 0.5 * logdet)


# -- mixture objectives --------------------------------------------------------

class TabularMixtureObjective:
    """log P(D | sum_i w_i T_i) as a function of the weights, with gradient."""

    def __init__(self, sources: SourceSet, counts: np.ndarray | None = None):
        if sources.kind != "tabular":
            raise InvalidArgumentError("tabular mixture objective needs tabular sources")
        self.P = sources.flat_transitions
        self.counts = np.zeros(self.P.shape[0]) if counts is None else np.ascontiguousarray(counts, dtype=np.float64).ravel()
        self._grad = np.empty(self.P.shape[1])

    def add(self, s: int, a: int, s_next: int, n_states: int, n_actions: int) -> None:
        self.counts[(s * n_actions + a) * n_states + s_next] += 1.0

    def value(self, w) -> float:
        return kernels.mixture_loglik(self.P, self.counts, np.ascontiguousarray(w, dtype=np.float64), PROB_FLOOR)

    def gradient(self, w) -> np.ndarray:
        kernels.mixture_loglik_grad(self.P, self.counts, np.ascontiguousarray(w, dtype=np.float64), PROB_FLOOR, self._grad)
        return self._grad.copy()

    def maximize(self, w0, tol: float = 1e-8, max_iter: int = 500):
        """Maximum-likelihood weights from ``w0`` via the compiled ascent loop."""
        from .simplex import maximize_mixture

        return maximize_mixture(self.P, self.counts, w0, PROB_FLOOR, tol, max_iter)

    def value_and_gradient(self, w):
        f = kernels.mixture_loglik_grad(self.P, self.counts, np.ascontiguousarray(w, dtype=np.float64), PROB_FLOOR, self._grad)
        return f, self._grad.copy()


class LQRMixtureObjective:
    """Linear-Gaussian log-likelihood of the mixed mean, quadratic in w.

    With residual scatter expanded over the sources, the objective is
    ``c - 0.5 w^T H w + b^T w`` and is evaluated in O(m^2) per call.
    """

    def __init__(self, sources: SourceSet, stats: LQRStats):
        if sources.kind != "lqr":
            raise InvalidArgumentError("LQR mixture objective needs LQR sources")
        first = sources.models[0]
        L = _noise_factor(first.noise_cov)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        self.Sinv = np.linalg.inv(first.noise_cov)
        self.means = sources.stacked_means
        self.stats = stats
        self.refresh()

    def refresh(self) -> None:
        """Recompute the quadratic form after ``stats`` changed."""
        st, Si, Ms = self.stats, self.Sinv, self.means
        SiM = np.einsum("ij,mjk->mik", Si, Ms)  # S^-1 M_i
        MZ = np.einsum("mik,kl->mil", Ms, st.zz)  # M_i Szz
        self.H = np.einsum("mik,nik->mn", SiM, MZ)  # tr(S^-1 M_i Szz M_j^T)
        self.H = 0.5 * (self.H + self.H.T)
        self.b = np.einsum("mik,ik->m", SiM, st.yz)  # tr(S^-1 Syz M_i^T)
        self.c = -0.5 * float(np.sum(Si * st.yy)) - st.count * (0.5 * st.dim_state * LOG_2PI + 0.5 * self.logdet)

    def value(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return self.c + float(self.b @ w) - 0.5 * float(w @ self.H @ w)

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        return self.b - self.H @ w

    def value_and_gradient(self, w):
        return self.value(w), self.gradient(w)

    def maximize(self, w0, tol: float = 1e-8, max_iter: int = 500):
        """Exact simplex maximizer of the quadratic (see ``maximize_quadratic_on_simplex``)."""
        from .simplex import maximize_quadratic_on_simplex

        return maximize_quadratic_on_simplex(self.H, self.b, w0, self.c, tol, max_iter)


# -- empirical (unconstrained) models -------------------------------------------

def empirical_tabular(counts: CountTable, rewards: np.ndarray, discount: float) -> TabularMDP:
    """Maximum-likelihood frequencies; unvisited (s, a) rows are uniform."""
    x = counts.x.astype(np.float64)
    n = counts.n.astype(np.float64)[..., None]
    S = x.shape[0]
    T = np.where(n > 0, x / np.where(n > 0, n, 1.0), 1.0 / S)
    return TabularMDP.trusted(T, rewards, discount)


def ridge_lqr(stats: LQRStats, like: LQRModel, ridge: float = 1e-6) -> LQRModel:
    """Ridge least-squares fit of the increment mean matrix."""
    dz = stats.zz.shape[0]
    M = np.linalg.solve(stats.zz + ridge * np.eye(dz), stats.yz.T).T
    return LQRModel.trusted(M, like.noise_cov, like.cost_state, like.cost_action)


def mixture_log_lik(sources: SourceSet, counts, w) -> float:
    """Convenience wrapper: tabular log-likelihood of the mixture ``w``."""
    obj = TabularMixtureObjective(sources, counts.x if isinstance(counts, CountTable) else counts)
    return obj.value(as_weights(w).w)
