"""Frame-history wrapper for memoryless agents."""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .model import Observation

__all__ = ["stack_frames", "FrameStack"]


def stack_frames(history: Sequence[Observation], k: int, n_obs: int) -> Observation:
    """Concatenate the ``k`` most recent frames, oldest first.

    Missing frames at the start of an episode are zero vectors and carry the
    padding code ``n_obs`` in the tuple-encoded id, so each window of ``k``
    base ids maps to a distinct integer in ``[0, (n_obs + 1) ** k)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not history:
        raise ValueError("history must contain at least the current observation")
    if k == 1:
        return history[-1]
    window = list(history)[-k:]
    dim = window[-1].features.shape[0]
    pad = k - len(window)
    base = n_obs + 1
    obs_id = 0
    for code in [n_obs] * pad + [o.id for o in window]:
        obs_id = obs_id * base + code
    features = np.concatenate([np.zeros(pad * dim)] + [o.features for o in window])
    return Observation(obs_id, features)


class FrameStack:
    """Presents the last ``k`` observations of an inner environment as one."""

    def __init__(self, env, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.env = env
        self.k = k
        self._history: deque[Observation] = deque(maxlen=k)

    @property
    def model(self):
        return self.env.model

    @property
    def n_actions(self) -> int:
        return self.env.n_actions

    @property
    def n_obs(self) -> int:
        return (self.env.n_obs + 1) ** self.k

    @property
    def n_features(self) -> int:
        return self.k * self.env.n_features

    @property
    def horizon(self) -> int:
        return self.env.horizon

    @property
    def done(self) -> bool:
        return self.env.done

    def _stacked(self) -> Observation:
        return stack_frames(self._history, self.k, self.env.n_obs)

    def reset(self, rng: np.random.Generator) -> Observation:
        self._history.clear()
        self._history.append(self.env.reset(rng))
        return self._stacked()

    def step(self, action: int, rng: np.random.Generator):
        obs, reward, done = self.env.step(action, rng)
        self._history.append(obs)
        return self._stacked(), reward, done
