"""Advantage-based regret minimization for partially observable tasks."""

from .arm import ARM, AdvantageEstimator, arm_train
from .baselines import ActorCritic, DoubleQLearning, actor_critic_train, q_learning_train
from .cfr import CFRSolver, cfr_solve, counterfactual_values
from .policies import regret_matching
from .pomdp import make_env

__version__ = "0.1.0"

__all__ = [
    "ARM",
    "AdvantageEstimator",
    "arm_train",
    "ActorCritic",
    "DoubleQLearning",
    "actor_critic_train",
    "q_learning_train",
    "CFRSolver",
    "cfr_solve",
    "counterfactual_values",
    "regret_matching",
    "make_env",
]
