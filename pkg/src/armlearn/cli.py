"""Command-line entry point.

Verbs: ``train``, ``cfr-solve``, ``oracle``, ``report``. Failures exit
nonzero and print one JSON object on stderr:
``{"error": <type>, "message": <text>, "field": <key or null>}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .cfr import VARIANTS, cfr_solve
from .harness.config import ConfigError, load_config
from .harness.metrics import TRACE_COLUMNS, format_value, write_regret_trace
from .harness.runner import report, run_experiment
from .pomdp.envs import ENV_NAMES, build_model
from .pomdp.oracles import (
    SearchSpec,
    best_deterministic_policy,
    best_memoryless_policy,
    per_step_value,
    value_iteration,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run every (algorithm, seed) pair of a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", help="output directory (overrides the config)")

    p = sub.add_parser("cfr-solve", help="tabular CFR/CFR+ with exact counterfactual values")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--variant", default="cfrplus", choices=VARIANTS)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--out", help="regret trace CSV path (default: stdout)")

    p = sub.add_parser("oracle", help="exact best memoryless and deterministic values")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--budget", type=int, default=2_000_000)

    p = sub.add_parser("report", help="rebuild summary and plot data from a run directory")
    p.add_argument("--runs", required=True)
    return parser


def _train(args):
    config = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "must be >= 0")
        config = replace(config, seeds=(args.seed,))
    result = run_experiment(config, args.out)
    payload = {
        "output_dir": str(result.output_dir),
        "runs": [{"run_id": r.run_id, "status": "ok" if r.ok else "failed"} for r in result.runs],
    }
    print(json.dumps(payload))
    return 1 if result.failed else 0


def _cfr_solve(args):
    if args.iters < 1:
        raise ConfigError("iters", "must be >= 1")
    model = build_model(args.env)
    result = cfr_solve(model, args.iters, args.variant)
    if args.out:
        write_regret_trace(args.out, result)
    else:
        sys.stdout.write(",".join(TRACE_COLUMNS) + "\n")
        for row in result.trace_rows():
            sys.stdout.write(",".join(format_value(row[c]) for c in TRACE_COLUMNS) + "\n")
    return 0


def _oracle(args):
    model = build_model(args.env)
    spec = SearchSpec(resolution=args.resolution, budget=args.budget)
    acting = model.acting_obs()
    # the mixed search has the larger grid, so any budget refusal happens first
    mix_table, mix_J = best_memoryless_policy(model, spec=spec)
    _, det_J = best_deterministic_policy(model, spec=spec)
    _, _, vi_J = value_iteration(model)
    gamma, H = model.discount, model.horizon
    out = {
        "env": args.env,
        "J_star": mix_J,
        "best_deterministic": det_J,
        "best_stochastic_mix": {str(int(o)): mix_table[o].tolist() for o in acting},
        "mdp_upper_bound": vi_J,
    }
    if H is not None:
        out["J_star_per_step"] = per_step_value(mix_J, gamma, H)
        out["best_deterministic_per_step"] = per_step_value(det_J, gamma, H)
    print(json.dumps(out))
    return 0


def _report(args):
    files = report(args.runs)
    print(json.dumps({"files": [str(f) for f in files]}))
    return 0


_COMMANDS = {"train": _train, "cfr-solve": _cfr_solve, "oracle": _oracle, "report": _report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            _error("UsageError", "invalid command line", None)
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _error("ConfigError", str(exc), exc.field)
        return 2
    except Exception as exc:
        _error(type(exc).__name__, str(exc), None)
        return 1


def _error(kind, message, field):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "field": field}) + "\n")


