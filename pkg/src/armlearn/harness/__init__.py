"""Experiment configuration, execution and metrics."""

from .config import (
    ALGORITHMS,
    APPROXIMATORS,
    ConfigError,
    EnvOptions,
    ExperimentConfig,
    Hyperparameters,
    config_from_dict,
    load_config,
)
from .metrics import (
    METRIC_COLUMNS,
    TRACE_COLUMNS,
    auc,
    emit_plot_data,
    overall_regret,
    read_csv,
    summarize,
    write_csv,
    write_regret_trace,
)
from .runner import build_env, build_learner, report, run_experiment, run_one

__all__ = [
    "ALGORITHMS",
    "APPROXIMATORS",
    "ConfigError",
    "EnvOptions",
    "ExperimentConfig",
    "Hyperparameters",
    "config_from_dict",
    "load_config",
    "METRIC_COLUMNS",
    "TRACE_COLUMNS",
    "auc",
    "emit_plot_data",
    "overall_regret",
    "read_csv",
    "summarize",
    "write_csv",
    "write_regret_trace",
    "build_env",
    "build_learner",
    "report",
    "run_experiment",
    "run_one",
]
