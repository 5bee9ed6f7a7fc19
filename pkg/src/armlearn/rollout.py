"""Trajectory collection and flat batch views used by every learner."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .pomdp.model import Transition

__all__ = [
    "sample_action",
    "run_episode",
    "TrajectoryBatch",
    "BatchArrays",
    "collect_batch",
    "collect_sharded",
    "window_sums",
    "stream",
]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    a = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    if a >= len(probs) or probs[a] <= 0.0:
        a = int(np.flatnonzero(probs > 0.0)[-1])
    return a


def run_episode(env, policy, rng: np.random.Generator) -> list[Transition]:
    obs = env.reset(rng)
    episode = []
    while True:
        p = policy(obs)
        a = sample_action(p, rng)
        next_obs, reward, done = env.step(a, rng)
        episode.append(Transition(obs, a, reward, next_obs, 0 if done else 1, float(p[a])))
        if done:
            return episode
        obs = next_obs


@dataclass
class TrajectoryBatch:
    episodes: list[list[Transition]]
    policy_id: int = 0
    total_steps: int = field(init=False)

    def __post_init__(self):
        self.total_steps = sum(len(e) for e in self.episodes)

    def episode_returns(self, gamma: float) -> np.ndarray:
        """Discounted return of each episode from its first step."""
        return np.array(
            [sum(gamma**k * tr.reward for k, tr in enumerate(ep)) for ep in self.episodes]
        )

    @cached_property
    def arrays(self) -> "BatchArrays":
        return BatchArrays.from_episodes(self.episodes)


@dataclass
class BatchArrays:
    """Column view of a batch; row ``i`` is one transition.

    ``pos`` is the step index inside its episode and ``length`` that
    episode's transition count, so transition ``i + j`` belongs to the same
    episode exactly when ``pos[i] + j < length[i]``.
    """

    ids: np.ndarray
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_ids: np.ndarray
    next_features: np.ndarray
    nonterminal: np.ndarray
    behavior_prob: np.ndarray
    pos: np.ndarray
    length: np.ndarray

    @classmethod
    def from_episodes(cls, episodes) -> "BatchArrays":
        flat = [tr for ep in episodes for tr in ep]
        return cls(
            ids=np.array([tr.obs.id for tr in flat], dtype=np.int64),
            features=np.stack([tr.obs.features for tr in flat]),
            actions=np.array([tr.action for tr in flat], dtype=np.int64),
            rewards=np.array([tr.reward for tr in flat], dtype=float),
            next_ids=np.array([tr.next_obs.id for tr in flat], dtype=np.int64),
            next_features=np.stack([tr.next_obs.features for tr in flat]),
            nonterminal=np.array([tr.nonterminal for tr in flat], dtype=float),
            behavior_prob=np.array([tr.behavior_prob for tr in flat], dtype=float),
            pos=np.concatenate([np.arange(len(ep)) for ep in episodes]),
            length=np.concatenate([np.full(len(ep), len(ep)) for ep in episodes]),
        )

    @classmethod
    def concat(cls, parts: list["BatchArrays"]) -> "BatchArrays":
        return cls(**{f: np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__})

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def inputs(self, approx, nxt: bool = False):
        if approx.uses_ids:
            return self.next_ids if nxt else self.ids
        return self.next_features if nxt else self.features

    def bootstrap_index(self, n: int):
        """Row holding ``o_{k+n}`` as its next observation, and the mask ``delta_{k+n}``.

        Windows that run past the episode end get mask 0.
        """
        idx = np.arange(len(self)) + n - 1
        inside = self.pos + n <= self.length
        idx = np.where(inside, idx, 0)
        mask = np.where(inside, self.nonterminal[idx], 0.0)
        return idx, mask


def window_sums(arrays: BatchArrays, n: int, gamma: float, start: int = 0, weights=None):
    """``sum_{j < n} gamma^j (prod_{l <= j} w_{k+start+l}) r_{k+start+j}``, truncated at episode end."""
    N = len(arrays)
    acc = np.zeros(N)
    prod = np.ones(N)
    base = np.arange(N) + start
    for j in range(n):
        inside = arrays.pos + start + j < arrays.length
        jj = np.where(inside, base + j, 0)
        if weights is not None:
            prod = np.where(inside, prod * weights[jj], prod)
        acc += np.where(inside, gamma**j * prod * arrays.rewards[jj], 0.0)
    return acc


def collect_batch(env, policy, batch_size: int, rng: np.random.Generator, policy_id: int = 0):
    """Run whole episodes until at least ``batch_size`` steps are gathered."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    episodes, steps = [], 0
    while steps < batch_size:
        ep = run_episode(env, policy, rng)
        episodes.append(ep)
        steps += len(ep)
    return TrajectoryBatch(episodes, policy_id)


def collect_sharded(env, policy, batch_size: int, rngs, policy_id: int = 0):
    """Split the step budget across one stream per worker, merged in worker order."""
    shard = -(-batch_size // len(rngs))
    episodes = []
    for rng in rngs:
        episodes.extend(collect_batch(env, policy, shard, rng).episodes)
    return TrajectoryBatch(episodes, policy_id)
