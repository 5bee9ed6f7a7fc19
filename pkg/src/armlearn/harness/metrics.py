"""Metrics rows, CSV persistence, and trace-level summaries."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

__all__ = [
    "METRIC_COLUMNS",
    "TRACE_COLUMNS",
    "format_value",
    "write_csv",
    "read_csv",
    "overall_regret",
    "auc",
    "summarize",
    "emit_plot_data",
    "write_regret_trace",
]

METRIC_COLUMNS = (
    "run_id",
    "seed",
    "iteration",
    "env_steps",
    "mean_return",
    "episodes",
    "max_abs_advantage",
    "mean_entropy",
    "exact_return",
)
TRACE_COLUMNS = ("iteration", "J", "max_immediate_regret", "avg_regret")
_INT_COLUMNS = {"seed", "iteration", "env_steps", "episodes", "n_runs"}


def format_value(value) -> str:
    """Stable text form: ints as-is, floats by ``repr``, NaN/None as blank."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path, rows, columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def _parse(column, text):
    if text == "":
        return float("nan")
    if column in _INT_COLUMNS and text.lstrip("-").isdigit():
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _returns(trace, prefer_exact=True) -> np.ndarray:
    out = []
    for row in trace:
        exact = row.get("exact_return", float("nan"))
        value = exact if prefer_exact and exact == exact else row["mean_return"]
        out.append(float(value))
    return np.array(out)


def overall_regret(trace, j_star: float, prefer_exact: bool = True) -> float:
    """``sum_t (J* - J(pi_t))``, using the exact value of each policy when recorded."""
    return float(np.sum(j_star - _returns(trace, prefer_exact)))


def auc(trace, key: str = "mean_return") -> float:
    """Trapezoidal area under ``key`` against env steps, divided by the step span.

    Rows whose value is missing are skipped; a single row returns its value.
    """
    steps = np.array([float(r["env_steps"]) for r in trace])
    y = np.array([float(r[key]) for r in trace])
    keep = ~np.isnan(y)
    steps, y = steps[keep], y[keep]
    if y.size == 0:
        raise ValueError("trace has no rows with a value")
    if y.size == 1 or steps[-1] == steps[0]:
        return float(y.mean())
    return float(np.trapezoid(y, steps) / (steps[-1] - steps[0]))


_SUMMARY_KEYS = ("env_steps", "mean_return", "exact_return", "max_abs_advantage", "mean_entropy")


def summarize(runs: dict[str, list[dict]], algorithm_of: dict[str, str]) -> list[dict]:
    """Per-algorithm, per-iteration mean and population std across runs."""
    by_algo: dict[str, list[list[dict]]] = {}
    for run_id in sorted(runs):
        by_algo.setdefault(algorithm_of[run_id], []).append(runs[run_id])
    rows = []
    for algo in sorted(by_algo):
        traces = by_algo[algo]
        length = min(len(t) for t in traces)
        for i in range(length):
            row = {"algorithm": algo, "iteration": traces[0][i]["iteration"], "n_runs": len(traces)}
            for key in _SUMMARY_KEYS:
                vals = np.array([float(t[i][key]) for t in traces])
                row[f"{key}_mean"] = float(np.mean(vals))
                row[f"{key}_std"] = float(np.std(vals))
            rows.append(row)
    return rows


SUMMARY_COLUMNS = ("algorithm", "iteration", "n_runs") + tuple(
    f"{k}_{s}" for k in _SUMMARY_KEYS for s in ("mean", "std")
)
PLOT_COLUMNS = ("algorithm", "env_steps", "mean", "std", "n_runs")


def emit_plot_data(runs: dict[str, list[dict]], algorithm_of: dict[str, str], path=None, key="mean_return"):
    """Long-format mean and std curves per algorithm.

    Runs sharing one env-step grid are aggregated pointwise; otherwise every
    run is interpolated onto a uniform grid spanning the common step range.
    """
    by_algo: dict[str, list[list[dict]]] = {}
    for run_id in sorted(runs):
        by_algo.setdefault(algorithm_of[run_id], []).append(runs[run_id])
    rows = []
    for algo in sorted(by_algo):
        traces = by_algo[algo]
        grids = [np.array([float(r["env_steps"]) for r in t]) for t in traces]
        ys = [np.array([float(r[key]) for r in t]) for t in traces]
        if all(g.shape == grids[0].shape and np.array_equal(g, grids[0]) for g in grids):
            grid, Y = grids[0], np.vstack(ys)
        else:
            lo = max(g[0] for g in grids)
            hi = min(g[-1] for g in grids)
            grid = np.linspace(lo, hi, max(len(g) for g in grids))
            Y = np.vstack([np.interp(grid, g, y) for g, y in zip(grids, ys)])
        mean, std = Y.mean(axis=0), Y.std(axis=0)
        for s, m, d in zip(grid, mean, std):
            rows.append({"algorithm": algo, "env_steps": float(s), "mean": m, "std": d, "n_runs": len(traces)})
    if path is not None:
        write_csv(path, rows, PLOT_COLUMNS)
    return rows


def write_regret_trace(path, result) -> Path:
    """CSV of a solver result's per-iteration J and regret diagnostics."""
    return write_csv(path, list(result.trace_rows()), TRACE_COLUMNS)
