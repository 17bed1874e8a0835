"""MDP model types and convex mixing over a set of source models.

Two model classes are supported:

* :class:`TabularMDP`: finite states and actions, a transition tensor
  ``transitions[s, a, s']`` and a reward table ``rewards[s, a]``.
* :class:`LQRModel`: linear-Gaussian dynamics in increment form
  ``s' - s = A s + B a + noise``. The mean matrix is stored with the action
  block first, ``mean = [B | A]``, so ``mean @ concat(a, s)`` is the expected
  increment.

Models are immutable; their arrays are flagged read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidArgumentError

STOCHASTIC_ATOL = 1e-9
SIMPLEX_ATOL = 1e-9


def _frozen(x, ndim=None, name="array"):
    arr = np.array(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transitions: np.ndarray
    rewards: np.ndarray
    discount: float

    def __post_init__(self):
        T = _frozen(self.transitions, 3, "transitions")
        R = _frozen(self.rewards, 2, "rewards")
        S, A, S2 = T.shape
        if S < 1 or A < 1 or S2 != S:
            raise InvalidArgumentError(f"transitions must have shape (S, A, S), got {T.shape}")
        if R.shape != (S, A):
            raise InvalidArgumentError(f"rewards must have shape {(S, A)}, got {R.shape}")
        if np.any(T < 0):
            raise InvalidArgumentError("transition probabilities must be non-negative")
        if not np.allclose(T.sum(axis=2), 1.0, rtol=0.0, atol=STOCHASTIC_ATOL):
            raise InvalidArgumentError("each transitions[s, a, :] row must sum to 1")
        if np.any(R < 0) or np.any(R > 1):
            raise InvalidArgumentError("rewards must lie in [0, 1]")
        if not 0.0 <= float(self.discount) < 1.0:
            raise InvalidArgumentError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "discount", float(self.discount))

    @classmethod
    def trusted(cls, transitions, rewards, discount):
        """Build without validation; for hot loops whose inputs are valid by construction."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "transitions", transitions)
        object.__setattr__(obj, "rewards", rewards)
        object.__setattr__(obj, "discount", float(discount))
        return obj

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def kind(self) -> str:
        return "tabular"

    def __eq__(self, other):
        if not isinstance(other, TabularMDP):
            return NotImplemented
        return (
            self.discount == other.discount
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.rewards, other.rewards)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LQRModel:
    mean: np.ndarray
    noise_cov: np.ndarray
    cost_state: np.ndarray
    cost_action: np.ndarray

    def __post_init__(self):
        M = _frozen(self.mean, 2, "mean")
        S = _frozen(self.noise_cov, 2, "noise_cov")
        Q = _frozen(self.cost_state, 2, "cost_state")
        R = _frozen(self.cost_action, 2, "cost_action")
        ds = M.shape[0]
        da = M.shape[1] - ds
        if ds < 1 or da < 1:
            raise InvalidArgumentError(f"mean must have shape (d_s, d_a + d_s), got {M.shape}")
        for name, X, d in (("noise_cov", S, ds), ("cost_state", Q, ds), ("cost_action", R, da)):
            if X.shape != (d, d):
                raise InvalidArgumentError(f"{name} must have shape {(d, d)}, got {X.shape}")
            if not np.allclose(X, X.T, rtol=0.0, atol=1e-10):
                raise InvalidArgumentError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise InvalidArgumentError("noise_cov must be positive definite")
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            raise InvalidArgumentError("cost_state must be positive semi-definite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise InvalidArgumentError("cost_action must be positive definite")
        for name, X in (("mean", M), ("noise_cov", S), ("cost_state", Q), ("cost_action", R)):
            object.__setattr__(self, name, X)

    @classmethod
    def from_dynamics(cls, A, B, noise_cov, cost_state, cost_action):
        """Build from increment-form dynamics ``s' - s = A s + B a``."""
        return cls(np.hstack([np.atleast_2d(B), np.atleast_2d(A)]), noise_cov, cost_state, cost_action)

    @classmethod
    def trusted(cls, mean, noise_cov, cost_state, cost_action):
        obj = object.__new__(cls)
        for name, X in (("mean", mean), ("noise_cov", noise_cov), ("cost_state", cost_state), ("cost_action", cost_action)):
            object.__setattr__(obj, name, X)
        return obj

    @property
    def dim_state(self) -> int:
        return self.mean.shape[0]

    @property
    def dim_action(self) -> int:
        return self.mean.shape[1] - self.mean.shape[0]

    @property
    def A(self) -> np.ndarray:
        return self.mean[:, self.dim_action:]

    @property
    def B(self) -> np.ndarray:
        return self.mean[:, : self.dim_action]

    @property
    def F(self) -> np.ndarray:
        """One-step transition matrix ``I + A``."""
        return np.eye(self.dim_state) + self.A

    @property
    def kind(self) -> str:
        return "lqr"

    def __eq__(self, other):
        if not isinstance(other, LQRModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("mean", "noise_cov", "cost_state", "cost_action")
        )

    __hash__ = None


Model = Union[TabularMDP, LQRModel]


@dataclass(frozen=True, eq=False)
class MixtureWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        if w.size < 1:
            raise InvalidArgumentError("mixture weights must be non-empty")
        if not np.all(np.isfinite(w)):
            raise InvalidArgumentError("mixture weights must be finite")
        if np.any(w < -1e-12):
            raise InvalidArgumentError(f"mixture weights must be non-negative, got {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidArgumentError(f"mixture weights must sum to 1, got {w.sum()!r}")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, m: int) -> "MixtureWeights":
        return cls(np.full(m, 1.0 / m))

    @classmethod
    def one_hot(cls, m: int, i: int) -> "MixtureWeights":
        w = np.zeros(m)
        w[i] = 1.0
        return cls(w)

    @property
    def m(self) -> int:
        return self.w.size

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, MixtureWeights):
            return NotImplemented
        return np.array_equal(self.w, other.w)

    __hash__ = None


def as_weights(w) -> MixtureWeights:
    return w if isinstance(w, MixtureWeights) else MixtureWeights(w)


@dataclass(frozen=True, eq=False)
class SourceSet:
    """A homogeneous, shape-compatible collection of source models.

    Mixing requires identical state and action spaces, so differing shapes
    are rejected even though transfer between unlike spaces is conceivable.
    """

    models: tuple

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise InvalidArgumentError("a source set needs at least one model")
        kinds = {type(m) for m in models}
        if len(kinds) != 1 or kinds.pop() not in (TabularMDP, LQRModel):
            raise InvalidArgumentError("sources must all be TabularMDP or all be LQRModel")
        first = models[0]
        for mdl in models[1:]:
            if isinstance(first, TabularMDP):
                if mdl.transitions.shape != first.transitions.shape:
                    raise InvalidArgumentError("tabular sources must share (S, A)")
                if mdl.discount != first.discount:
                    raise InvalidArgumentError("tabular sources must share the discount")
            else:
                if mdl.mean.shape != first.mean.shape:
                    raise InvalidArgumentError("LQR sources must share (d_s, d_a)")
                for f in ("noise_cov", "cost_state", "cost_action"):
                    if not np.array_equal(getattr(mdl, f), getattr(first, f)):
                        raise InvalidArgumentError(f"LQR sources must share {f}")
        object.__setattr__(self, "models", models)

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def kind(self) -> str:
        return self.models[0].kind

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i):
        return self.models[i]

    def __iter__(self):
        return iter(self.models)

    @cached_property
    def stacked_transitions(self) -> np.ndarray:
        """Array of shape (S, A, S, m)."""
        arr = np.ascontiguousarray(np.stack([mdl.transitions for mdl in self.models], axis=-1))
        arr.setflags(write=False)
        return arr

    @cached_property
    def stacked_rewards(self) -> np.ndarray:
        """Array of shape (S, A, m)."""
        arr = np.ascontiguousarray(np.stack([mdl.rewards for mdl in self.models], axis=-1))
        arr.setflags(write=False)
        return arr

    @cached_property
    def flat_transitions(self) -> np.ndarray:
        """C-contiguous (S*A*S, m) matrix used by the likelihood kernels."""
        T = self.stacked_transitions
        arr = np.ascontiguousarray(T.reshape(-1, T.shape[-1]))
        arr.setflags(write=False)
        return arr

    @cached_property
    def stacked_means(self) -> np.ndarray:
        """Array of shape (m, d_s, d_a + d_s)."""
        arr = np.stack([mdl.mean for mdl in self.models])
        arr.setflags(write=False)
        return arr


def _check_mix(sources: SourceSet, w, kind: str) -> np.ndarray:
    if not isinstance(sources, SourceSet):
        sources = SourceSet(tuple(sources))
    if sources.kind != kind:
        raise InvalidArgumentError(f"expected {kind} sources, got {sources.kind}")
    w = as_weights(w).w
    if w.size != sources.m:
        raise InvalidArgumentError(f"got {w.size} weights for {sources.m} sources")
    return sources, w


def mix_tabular(sources: SourceSet, w, mix_rewards: bool = False) -> TabularMDP:
    """Convex combination of tabular sources.

    Transitions are always mixed. Rewards are mixed only when
    ``mix_rewards`` is set; otherwise the first source's reward table, shared
    by assumption, is used.
    """
    sources, w = _check_mix(sources, w, "tabular")
    T = sources.stacked_transitions @ w
    if mix_rewards:
        R = sources.stacked_rewards @ w
    else:
        R = sources.models[0].rewards
    return TabularMDP(T, R, sources.models[0].discount)


def mix_lqr(sources: SourceSet, w) -> LQRModel:
    """Convex combination of mean matrices; noise and costs are task constants."""
    sources, w = _check_mix(sources, w, "lqr")
    M = np.tensordot(w, sources.stacked_means, axes=1)
    first = sources.models[0]
    return LQRModel(M, first.noise_cov, first.cost_state, first.cost_action)


def mix(sources: SourceSet, w, **kwargs) -> Model:
    if sources.kind == "tabular":
        return mix_tabular(sources, w, **kwargs)
    return mix_lqr(sources, w)


# -- serialization -----------------------------------------------------------

def model_to_dict(model: Model) -> dict:
    if isinstance(model, TabularMDP):
        return {
            "kind": "tabular",
            "n_states": model.n_states,
            "n_actions": model.n_actions,
            "transitions": model.transitions.tolist(),
            "rewards": model.rewards.tolist(),
            "discount": model.discount,
        }
    if isinstance(model, LQRModel):
        return {
            "kind": "lqr",
            "dim_state": model.dim_state,
            "dim_action": model.dim_action,
            "mean": model.mean.tolist(),
            "noise_cov": model.noise_cov.tolist(),
            "cost_state": model.cost_state.tolist(),
            "cost_action": model.cost_action.tolist(),
        }
    raise InvalidArgumentError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict) -> Model:
    kind = d.get("kind")
    if kind == "tabular":
        mdl = TabularMDP(d["transitions"], d["rewards"], d["discount"])
        if "n_states" in d and d["n_states"] != mdl.n_states:
            raise InvalidArgumentError("n_states disagrees with transitions")
        if "n_actions" in d and d["n_actions"] != mdl.n_actions:
            raise InvalidArgumentError("n_actions disagrees with transitions")
        return mdl
    if kind == "lqr":
        mdl = LQRModel(d["mean"], d["noise_cov"], d["cost_state"], d["cost_action"])
        if "dim_state" in d and d["dim_state"] != mdl.dim_state:
            raise InvalidArgumentError("dim_state disagrees with mean")
        if "dim_action" in d and d["dim_action"] != mdl.dim_action:
            raise InvalidArgumentError("dim_action disagrees with mean")
        return mdl
    raise InvalidArgumentError(f"unknown model kind {kind!r}")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))


def sources_to_dict(sources: SourceSet) -> dict:
    return {"sources": [model_to_dict(m) for m in sources]}


def sources_from_dict(d: dict) -> SourceSet:
    return SourceSet(tuple(model_from_dict(x) for x in d["sources"]))

