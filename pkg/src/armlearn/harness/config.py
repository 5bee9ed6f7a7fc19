"""JSON experiment configuration with defaults and field-level validation.

Schema (every key except ``env`` and ``algorithm`` is optional)::

    {
      "env": "aliased_two_state" | "gridmaze" | "gridmaze3" | "occluded_ball",
      "env_options": {"occluded": bool, "frame_history": int, "maze": str,
                      "discount": float, "horizon": int},
      "algorithm": name or list of names from ALGORITHMS,
      "approximator": "table" | "linear" | "mlp",
      "hyperparameters": {see Hyperparameters},
      "seeds": [int, ...],
      "output_dir": str,
      "workers": int,        # collection streams per batch
      "processes": int       # runs executed concurrently
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..pomdp.envs import ENV_NAMES

__all__ = [
    "ALGORITHMS",
    "APPROXIMATORS",
    "ConfigError",
    "EnvOptions",
    "Hyperparameters",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
]

ALGORITHMS = ("arm", "arm_offpolicy", "cfr", "cfrplus", "dqn", "a2c")
APPROXIMATORS = ("table", "linear", "mlp")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class EnvOptions:
    occluded: bool | None = None
    frame_history: int = 1
    maze: str | None = None
    discount: float | None = None
    horizon: int | None = None


@dataclass(frozen=True)
class Hyperparameters:
    """Shared knobs; ``None`` picks the algorithm's documented default.

    ``iterations * batch_size`` is the step budget of the step-driven
    Q-learner, which reports one metrics row per ``batch_size`` steps.
    """

    iterations: int = 100
    batch_size: int = 1024
    gradient_steps: int | None = None
    minibatch_size: int | None = None
    gamma: float | None = None
    n_steps: int | None = None
    tau: float = 0.01
    learning_rate: float | None = None
    hidden_units: int = 64
    clip: float = 1.0
    replay_capacity: int | None = None
    target_update: int = 1000
    train_every: int = 4
    epsilon_start: float = 1.0
    epsilon_final: float = 0.01
    exploration_fraction: float = 0.2
    entropy_coef: float = 0.01
    max_grad_norm: float | None = 0.5
    epochs: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    algorithms: tuple[str, ...]
    env_options: EnvOptions = field(default_factory=EnvOptions)
    approximator: str = "table"
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    workers: int = 1
    processes: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithm"] = list(d.pop("algorithms"))
        d["seeds"] = list(d["seeds"])
        return d


_POSITIVE_INTS = {
    "iterations", "batch_size", "gradient_steps", "minibatch_size", "n_steps",
    "hidden_units", "replay_capacity", "target_update", "train_every", "epochs",
}
# name -> (low, high, low_open)
_RANGES = {
    "gamma": (0.0, 1.0, True),
    "tau": (0.0, 1.0, False),
    "learning_rate": (0.0, None, True),
    "clip": (0.0, None, False),
    "epsilon_start": (0.0, 1.0, False),
    "epsilon_final": (0.0, 1.0, False),
    "exploration_fraction": (0.0, 1.0, False),
    "entropy_coef": (0.0, None, False),
    "max_grad_norm": (0.0, None, True),
}


def _check_keys(data, cls, where):
    if not isinstance(data, dict):
        raise ConfigError(where, f"expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")


def _int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {value}")
    return value


def _number(value, name, low=None, high=None, low_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    value = float(value)
    if value != value:
        raise ConfigError(name, "must not be NaN")
    below = low is not None and (value < low or (low_open and value == low))
    if below or (high is not None and value > high):
        interval = f"{'(' if low_open else '['}{low}, {'inf)' if high is None else f'{high}]'}"
        raise ConfigError(name, f"must lie in {interval}, got {value}")
    return value


def _hyperparameters(data) -> Hyperparameters:
    _check_keys(data, Hyperparameters, "hyperparameters")
    out = {}
    for key, value in data.items():
        name = f"hyperparameters.{key}"
        if value is None:
            default = Hyperparameters.__dataclass_fields__[key].default
            if default is not None:
                raise ConfigError(name, "may not be null")
            out[key] = None
        elif key in _POSITIVE_INTS:
            out[key] = _int(value, name)
        else:
            low, high, low_open = _RANGES[key]
            out[key] = _number(value, name, low, high, low_open)
    return Hyperparameters(**out)


def _env_options(data, env) -> EnvOptions:
    _check_keys(data, EnvOptions, "env_options")
    out = dict(data)
    if out.get("occluded") is not None:
        if not isinstance(out["occluded"], bool):
            raise ConfigError("env_options.occluded", "expected true or false")
        if env != "occluded_ball":
            raise ConfigError("env_options.occluded", f"does not apply to env {env!r}")
    if "frame_history" in out:
        _int(out["frame_history"], "env_options.frame_history")
    if out.get("maze") is not None and not isinstance(out["maze"], str):
        raise ConfigError("env_options.maze", "expected a maze name or path")
    if out.get("discount") is not None:
        out["discount"] = _number(out["discount"], "env_options.discount", 0.0, 1.0, True)
    if out.get("horizon") is not None:
        _int(out["horizon"], "env_options.horizon")
    return EnvOptions(**out)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed config object and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)} - {"algorithms"} | {"algorithm"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in ("env", "algorithm"):
        if key not in data:
            raise ConfigError(key, "required key is missing")

    env = data["env"]
    if env not in ENV_NAMES:
        raise ConfigError("env", f"unknown environment {env!r}; expected one of {ENV_NAMES}")
    algos = data["algorithm"]
    algos = [algos] if isinstance(algos, str) else algos
    if not isinstance(algos, list) or not algos:
        raise ConfigError("algorithm", "expected a name or a non-empty list of names")
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError("algorithm", f"unknown algorithm {a!r}; expected one of {ALGORITHMS}")
    if len(set(algos)) != len(algos):
        raise ConfigError("algorithm", "duplicate algorithm names")

    approximator = data.get("approximator", "table")
    if approximator not in APPROXIMATORS:
        raise ConfigError(
            "approximator", f"unknown approximator {approximator!r}; expected one of {APPROXIMATORS}"
        )
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a non-empty list of integers")
    for s in seeds:
        _int(s, "seeds", minimum=0)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "expected a non-empty path string")

    return ExperimentConfig(
        env=env,
        algorithms=tuple(algos),
        env_options=_env_options(data.get("env_options", {}), env),
        approximator=approximator,
        hyperparameters=_hyperparameters(data.get("hyperparameters", {})),
        seeds=tuple(seeds),
        output_dir=output_dir,
        workers=_int(data.get("workers", 1), "workers"),
        processes=_int(data.get("processes", 1), "processes"),
    )


def load_config(path) -> ExperimentConfig:
    """Read, validate and default a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)
