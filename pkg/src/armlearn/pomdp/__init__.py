from .envs import (
    ENV_NAMES,
    aliased_two_state,
    ball_obs_id,
    build_model,
    gridmaze,
    load_maze,
    make_env,
    occluded_ball,
    parse_maze,
)
from .frames import FrameStack, stack_frames
from .model import (
    EnvModel,
    EpisodeTerminatedError,
    Observation,
    POMDPEnv,
    Transition,
    reset,
    step,
)
from .oracles import (
    SearchBudgetError,
    SearchSpec,
    as_policy_table,
    best_deterministic_policy,
    best_memoryless_policy,
    evaluate_policies,
    exact_policy_eval,
    per_step_value,
    value_iteration,
)

__all__ = [
    "ENV_NAMES",
    "EnvModel",
    "EpisodeTerminatedError",
    "FrameStack",
    "Observation",
    "POMDPEnv",
    "SearchBudgetError",
    "SearchSpec",
    "Transition",
    "aliased_two_state",
    "as_policy_table",
    "ball_obs_id",
    "best_deterministic_policy",
    "best_memoryless_policy",
    "build_model",
    "evaluate_policies",
    "exact_policy_eval",
    "gridmaze",
    "load_maze",
    "make_env",
    "occluded_ball",
    "parse_maze",
    "per_step_value",
    "reset",
    "stack_frames",
    "step",
    "value_iteration",
]
