"""Input validation helpers shared by the learners and the harness."""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "check_scalar_range",
    "check_positive_int",
    "check_probabilities",
    "check_observations",
]


def check_scalar_range(x, name, low=None, high=None, low_open=False, high_open=False):
    """Return ``float(x)`` or raise ``ValueError`` naming the parameter."""
    if isinstance(x, bool) or not isinstance(x, numbers.Real) or not np.isfinite(x):
        raise ValueError(f"{name}: expected a finite real number, got {x!r}")
    x = float(x)
    if low is not None and (x < low or (low_open and x == low)):
        bracket = "(" if low_open else "["
        raise ValueError(f"{name}={x} is outside {bracket}{low}, {high if high is not None else 'inf'}")
    if high is not None and (x > high or (high_open and x == high)):
        bracket = ")" if high_open else "]"
        raise ValueError(f"{name}={x} is outside [{low}, {high}{bracket}")
    return x


def check_positive_int(x, name, minimum=1):
    if isinstance(x, bool) or not isinstance(x, numbers.Integral) or x < minimum:
        raise ValueError(f"{name}: expected an integer >= {minimum}, got {x!r}")
    return int(x)


def check_probabilities(p, tol=1e-12):
    p = np.asarray(p, dtype=float)
    if p.min() < -tol or np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise ValueError("expected probability vectors along the last axis")
    return p


def check_observations(X, n_features=None):
    """Coerce observations to ``(ids, features)`` arrays.

    Accepts a single :class:`~armlearn.pomdp.Observation`, a sequence of them,
    an integer id array, or a 2-D feature matrix.
    """
    from ..pomdp.model import Observation

    if isinstance(X, Observation):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], Observation):
        ids = np.array([o.id for o in X], dtype=np.int64)
        feats = np.stack([o.features for o in X])
    else:
        arr = np.asarray(X)
        if arr.ndim == 1 and np.issubdtype(arr.dtype, np.integer):
            return arr.astype(np.int64), None
        if arr.ndim != 2:
            raise ValueError("observations must be Observation objects, ids, or a 2-D feature array")
        ids, feats = np.full(arr.shape[0], -1, dtype=np.int64), arr.astype(float)
    if n_features is not None and feats is not None and feats.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {feats.shape[1]}")
    return ids, feats
