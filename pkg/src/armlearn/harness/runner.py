"""Seeded multi-run execution and output files."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from ..arm import ARM
from ..baselines import ActorCritic, DoubleQLearning
from ..cfr import CFRSolver
from ..pomdp.envs import make_env
from .config import ExperimentConfig
from .metrics import (
    METRIC_COLUMNS,
    SUMMARY_COLUMNS,
    emit_plot_data,
    read_csv,
    summarize,
    write_csv,
)

__all__ = ["RunResult", "ExperimentResult", "build_env", "build_learner", "run_id", "run_one", "run_experiment", "report"]

MANIFEST_COLUMNS = ("run_id", "algorithm", "seed", "status", "message")


@dataclass
class RunResult:
    run_id: str
    algorithm: str
    seed: int
    rows: list | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentResult:
    output_dir: Path
    runs: list[RunResult]
    files: list[Path]

    @property
    def failed(self) -> list[RunResult]:
        return [r for r in self.runs if not r.ok]


def run_id(algorithm: str, seed: int) -> str:
    return f"{algorithm}_seed{seed}"


def build_env(config: ExperimentConfig):
    opts = config.env_options
    return make_env(
        config.env,
        occluded=opts.occluded,
        frame_history=opts.frame_history,
        maze=opts.maze,
        discount=opts.discount,
        horizon=opts.horizon,
    )


def _pick(value, default):
    return default if value is None else value


def build_learner(config: ExperimentConfig, algorithm: str, seed: int):
    """Learner for one (algorithm, seed) pair with config defaults applied."""
    hp = config.hyperparameters
    if algorithm in ("cfr", "cfrplus"):
        return CFRSolver(variant=algorithm, iterations=hp.iterations, gamma=hp.gamma)
    if algorithm in ("arm", "arm_offpolicy"):
        default_n = 1 if config.env == "occluded_ball" else 5
        return ARM(
            approximator=config.approximator,
            iterations=hp.iterations,
            batch_size=hp.batch_size,
            gradient_steps=hp.gradient_steps,
            minibatch_size=_pick(hp.minibatch_size, 32),
            gamma=hp.gamma,
            n_steps=_pick(hp.n_steps, default_n),
            tau=hp.tau,
            learning_rate=hp.learning_rate,
            hidden_units=hp.hidden_units,
            off_policy=algorithm == "arm_offpolicy",
            clip=hp.clip,
            replay_capacity=hp.replay_capacity,
            workers=config.workers,
            random_state=seed,
        )
    if algorithm == "dqn":
        return DoubleQLearning(
            approximator=config.approximator,
            total_steps=hp.iterations * hp.batch_size,
            batch_size=hp.batch_size,
            n_steps=_pick(hp.n_steps, 1),
            gamma=hp.gamma,
            learning_rate=hp.learning_rate,
            minibatch_size=_pick(hp.minibatch_size, 32),
            replay_capacity=_pick(hp.replay_capacity, 25_000),
            target_update=hp.target_update,
            train_every=hp.train_every,
            epsilon_start=hp.epsilon_start,
            epsilon_final=hp.epsilon_final,
            exploration_fraction=hp.exploration_fraction,
            hidden_units=hp.hidden_units,
            random_state=seed,
        )
    if algorithm == "a2c":
        return ActorCritic(
            approximator=config.approximator,
            iterations=hp.iterations,
            batch_size=hp.batch_size,
            minibatch_size=_pick(hp.minibatch_size, 128),
            epochs=hp.epochs,
            n_steps=_pick(hp.n_steps, 40),
            gamma=hp.gamma,
            learning_rate=hp.learning_rate,
            entropy_coef=hp.entropy_coef,
            max_grad_norm=hp.max_grad_norm,
            hidden_units=hp.hidden_units,
            workers=config.workers,
            random_state=seed,
        )
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_one(config: ExperimentConfig, algorithm: str, seed: int) -> RunResult:
    """Train one run; failures are captured rather than raised."""
    rid = run_id(algorithm, seed)
    try:
        learner = build_learner(config, algorithm, seed)
        learner.fit(build_env(config))
    except Exception as exc:  # a failed run is recorded and the others continue
        return RunResult(rid, algorithm, seed, None, f"{type(exc).__name__}: {exc}")
    rows = [{"run_id": rid, "seed": seed, **row} for row in learner.metrics_]
    return RunResult(rid, algorithm, seed, rows)


def _run_args(args):
    return run_one(*args)


def run_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentResult:
    """Execute every (algorithm, seed) pair and write per-run CSVs plus summaries.

    Output files: ``<run_id>.csv`` per successful run, ``runs.csv`` (status of
    every run), ``summary.csv``, ``plot_data.csv`` and ``config.json``.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, a, s) for a in config.algorithms for s in config.seeds]
    if config.processes > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.processes) as pool:
            results = list(pool.map(_run_args, jobs))
    else:
        results = [run_one(*job) for job in jobs]

    files = []
    for r in results:
        if r.ok:
            files.append(write_csv(out / f"{r.run_id}.csv", r.rows, METRIC_COLUMNS))
    manifest = [
        {"run_id": r.run_id, "algorithm": r.algorithm, "seed": r.seed,
         "status": "ok" if r.ok else "failed", "message": r.error or ""}
        for r in results
    ]
    files.append(write_csv(out / "runs.csv", manifest, MANIFEST_COLUMNS))
    cfg = replace(config, output_dir=str(config.output_dir))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(out / "config.json")
    done = {r.run_id: r.rows for r in results if r.ok}
    if done:
        files.extend(_write_summaries(out, done, {r.run_id: r.algorithm for r in results}))
    return ExperimentResult(out, results, files)


def _write_summaries(out: Path, runs, algorithm_of):
    summary = write_csv(out / "summary.csv", summarize(runs, algorithm_of), SUMMARY_COLUMNS)
    plot = out / "plot_data.csv"
    emit_plot_data(runs, algorithm_of, plot)
    return [summary, plot]


def report(runs_dir) -> list[Path]:
    """Rebuild ``summary.csv`` and ``plot_data.csv`` from a run directory."""
    runs_dir = Path(runs_dir)
    manifest = runs_dir / "runs.csv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no runs.csv in {runs_dir}")
    entries = [m for m in read_csv(manifest) if m["status"] == "ok"]
    if not entries:
        raise ValueError(f"no completed runs in {runs_dir}")
    runs = {m["run_id"]: read_csv(runs_dir / f"{m['run_id']}.csv") for m in entries}
    return _write_summaries(runs_dir, runs, {m["run_id"]: m["algorithm"] for m in entries})
