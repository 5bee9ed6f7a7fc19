"""Estimator base class: ``fit(env)`` then query the learned policy."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .pomdp.model import EnvModel, POMDPEnv
from .utils.validation import check_observations

__all__ = ["BaseLearner", "model_of", "as_env"]


def model_of(env) -> EnvModel:
    if isinstance(env, EnvModel):
        return env
    model = getattr(env, "model", None)
    if isinstance(model, EnvModel):
        return model
    raise TypeError(f"expected an EnvModel or an environment wrapping one, got {type(env)!r}")


def as_env(env):
    """Runtime environment for ``env``; bare models get one-hot features."""
    return POMDPEnv(env) if isinstance(env, EnvModel) else env


class BaseLearner(BaseEstimator):
    """Common surface of the learners.

    ``fit(env)`` trains against an environment and sets ``policy_`` and
    ``metrics_``. The fitted policy is queried with ``predict_proba`` or
    ``predict`` (most probable action).
    """

    def _check_fitted(self):
        check_is_fitted(self, "policy_")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        ids, feats = check_observations(X)
        return self.policy_.probs(ids, feats)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def sample(self, obs, rng: np.random.Generator) -> int:
        p = self.predict_proba([obs])[0]
        return int(rng.choice(len(p), p=p))
