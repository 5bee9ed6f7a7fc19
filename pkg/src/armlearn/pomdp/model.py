"""Finite POMDP model and the runtime environment that samples from it."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "EnvModel",
    "Observation",
    "Transition",
    "POMDPEnv",
    "EpisodeTerminatedError",
    "reset",
    "step",
]

_SUM_TOL = 1e-12


class EpisodeTerminatedError(RuntimeError):
    """Raised when stepping an episode that has already ended."""


@dataclass(frozen=True, eq=False)
class EnvModel:
    """Explicit finite POMDP.

    ``transition`` is a sparse ``(n_states * n_actions, n_states)`` matrix whose
    row ``s * n_actions + a`` is the next-state distribution of ``(s, a)``.
    Entering a state flagged in ``terminal`` ends the episode; terminal states
    never act. ``horizon=None`` marks the infinite-horizon discounted variant,
    which only the oracles support.
    """

    transition: sp.csr_matrix
    reward: np.ndarray
    obs_map: np.ndarray
    initial_dist: np.ndarray
    terminal: np.ndarray
    discount: float
    horizon: int | None
    n_obs: int
    name: str = "pomdp"

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        if reward.ndim != 2:
            raise ValueError("reward must have shape (n_states, n_actions)")
        n_states, n_actions = reward.shape
        transition = sp.csr_matrix(self.transition, dtype=float)
        if transition.shape != (n_states * n_actions, n_states):
            raise ValueError(
                f"transition must have shape {(n_states * n_actions, n_states)}, "
                f"got {transition.shape}"
            )
        if transition.nnz and transition.data.min() < 0:
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = np.asarray(transition.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(row_sums - 1.0) > _SUM_TOL)
        if bad.size:
            s, a = divmod(int(bad[0]), n_actions)
            raise ValueError(
                f"transition row (state={s}, action={a}) sums to {row_sums[bad[0]]!r}"
            )
        obs_map = np.asarray(self.obs_map, dtype=np.int64)
        if obs_map.shape != (n_states,):
            raise ValueError("obs_map must assign one observation id to every state")
        if obs_map.min() < 0 or obs_map.max() >= self.n_obs:
            raise ValueError("obs_map ids must lie in [0, n_obs)")
        init = np.asarray(self.initial_dist, dtype=float)
        if init.shape != (n_states,) or init.min() < 0:
            raise ValueError("initial_dist must be a nonnegative vector over states")
        if abs(init.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"initial_dist sums to {init.sum()!r}")
        terminal = np.asarray(self.terminal, dtype=bool)
        if terminal.shape != (n_states,):
            raise ValueError("terminal must be a boolean vector over states")
        if np.any(init[terminal] > 0):
            raise ValueError("initial_dist puts mass on a terminal state")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {self.discount}")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError("horizon must be a positive integer or None")
        for name, value in (
            ("transition", transition),
            ("reward", reward),
            ("obs_map", obs_map),
            ("initial_dist", init),
            ("terminal", terminal),
        ):
            object.__setattr__(self, name, value)
        for arr in (reward, obs_map, init, terminal):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @cached_property
    def kernel(self):
        """Transition matrix for value backups; dense when the model is small."""
        if self.transition.shape[0] * self.transition.shape[1] <= 250_000:
            return self.transition.toarray()
        return self.transition

    @cached_property
    def kernel_T(self):
        """Transpose of :attr:`kernel`, ``(n_states, n_states * n_actions)``."""
        k = self.kernel
        return np.ascontiguousarray(k.T) if isinstance(k, np.ndarray) else k.T.tocsr()

    def transition_probs(self, state: int, action: int) -> np.ndarray:
        """Dense next-state distribution of ``(state, action)``."""
        return self.transition.getrow(state * self.n_actions + action).toarray().ravel()

    def acting_obs(self) -> np.ndarray:
        """Sorted ids of observations emitted by some nonterminal state."""
        return np.unique(self.obs_map[~self.terminal])


@dataclass(frozen=True, eq=False)
class Observation:
    id: int
    features: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    nonterminal: int
    behavior_prob: float

    def __post_init__(self):
        if self.nonterminal not in (0, 1):
            raise ValueError("nonterminal must be 0 or 1")
        if not 0.0 < self.behavior_prob <= 1.0:
            raise ValueError(
                f"behavior_prob must lie in (0, 1], got {self.behavior_prob!r}"
            )


def one_hot_features(n_obs: int) -> np.ndarray:
    return np.eye(n_obs)


@dataclass(eq=False)
class POMDPEnv:
    """Single-owner mutable episode runner over an :class:`EnvModel`.

    ``feature_table`` maps observation id to its feature vector; it defaults to
    the one-hot encoding of the id.
    """

    model: EnvModel
    feature_table: np.ndarray | None = None
    state: int | None = field(default=None, init=False)
    t: int = field(default=0, init=False)
    done: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.model.horizon is None:
            raise ValueError("sampling requires a finite horizon")
        if self.feature_table is None:
            self.feature_table = one_hot_features(self.model.n_obs)
        self.feature_table = np.asarray(self.feature_table, dtype=float)
        if self.feature_table.shape[0] != self.model.n_obs:
            raise ValueError("feature_table needs one row per observation id")
        self.feature_table.setflags(write=False)
        P = self.model.transition
        self._indptr = P.indptr
        self._indices = P.indices
        self._cum = np.empty_like(P.data)
        for row in range(P.shape[0]):
            lo, hi = P.indptr[row], P.indptr[row + 1]
            self._cum[lo:hi] = np.cumsum(P.data[lo:hi])
        self._init_cum = np.cumsum(self.model.initial_dist)
        self._obs_cache = [
            Observation(i, self.feature_table[i]) for i in range(self.model.n_obs)
        ]

    # interface shared with wrappers
    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    @property
    def n_obs(self) -> int:
        return self.model.n_obs

    @property
    def n_features(self) -> int:
        return self.feature_table.shape[1]

    @property
    def horizon(self) -> int:
        return self.model.horizon

    def observation(self, obs_id: int) -> Observation:
        return self._obs_cache[obs_id]

    def reset(self, rng: np.random.Generator) -> Observation:
        u = rng.random()
        s = int(np.searchsorted(self._init_cum, u, side="right"))
        self.state = min(s, self.model.n_states - 1)
        self.t = 0
        self.done = False
        return self._obs_cache[self.model.obs_map[self.state]]

    def step(self, action: int, rng: np.random.Generator):
        if self.done:
            raise EpisodeTerminatedError("episode already terminated; call reset()")
        m = self.model
        if not 0 <= action < m.n_actions:
            raise ValueError(f"invalid action {action!r}")
        s = self.state
        row = s * m.n_actions + action
        lo, hi = self._indptr[row], self._indptr[row + 1]
        if hi - lo == 1:
            nxt = int(self._indices[lo])
        else:
            k = int(np.searchsorted(self._cum[lo:hi], rng.random(), side="right"))
            nxt = int(self._indices[lo + min(k, hi - lo - 1)])
        reward = float(m.reward[s, action])
        self.state = nxt
        self.t += 1
        self.done = bool(m.terminal[nxt]) or self.t >= m.horizon
        return self._obs_cache[m.obs_map[nxt]], reward, self.done


def reset(env, rng: np.random.Generator) -> Observation:
    return env.reset(rng)


def step(env, action: int, rng: np.random.Generator):
    return env.step(action, rng)
