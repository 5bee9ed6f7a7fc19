"""Memoryless policies over discrete actions."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "regret_matching",
    "epsilon_greedy",
    "softmax",
    "entropy",
    "Policy",
    "TabularPolicy",
    "FunctionPolicy",
    "uniform_policy",
]


def regret_matching(values) -> np.ndarray:
    """Distribution proportional to the positive parts of ``values``.

    Works on the last axis. Rows with no positive entry map to uniform.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("regret_matching requires finite values")
    pos = np.maximum(values, 0.0)
    total = pos.sum(axis=-1, keepdims=True)
    n = values.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0.0, pos / np.where(total > 0.0, total, 1.0), 1.0 / n)
    return out


def epsilon_greedy(q, epsilon: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    out = np.full(q.shape, epsilon / n)
    best = np.argmax(q, axis=-1)
    np.put_along_axis(out, best[..., None], epsilon / n + (1.0 - epsilon), axis=-1)
    return out


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


class Policy:
    """Maps observations to action distributions.

    Subclasses implement ``probs(ids, features)`` for a batch of observations.
    """

    n_actions: int

    def probs(self, ids: np.ndarray, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, obs) -> np.ndarray:
        return self.probs(np.array([obs.id]), obs.features[None, :])[0]

    def table_for(self, env) -> np.ndarray:
        """Tabulate the policy over every base observation id of ``env``."""
        if env.n_obs != env.model.n_obs:
            raise ValueError("frame-stacked policies have no memoryless table")
        ids = np.arange(env.n_obs)
        return self.probs(ids, env.feature_table)


class TabularPolicy(Policy):
    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)
        self.n_actions = self.table.shape[1]

    def probs(self, ids, features=None):
        return self.table[np.asarray(ids)]

    def __call__(self, obs) -> np.ndarray:
        return self.table[obs.id]

    def table_for(self, env) -> np.ndarray:
        return self.table


class FunctionPolicy(Policy):
    """Policy backed by a batch function ``fn(ids, features) -> probs``."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], n_actions: int):
        self.fn = fn
        self.n_actions = n_actions

    def probs(self, ids, features):
        return self.fn(np.asarray(ids), np.asarray(features))


def uniform_policy(n_obs: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(np.full((n_obs, n_actions), 1.0 / n_actions))
