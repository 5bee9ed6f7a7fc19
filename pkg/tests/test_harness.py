import json
import math

import pytest

from armlearn.harness import (
    ConfigError,
    auc,
    config_from_dict,
    emit_plot_data,
    load_config,
    overall_regret,
    read_csv,
    report,
    run_experiment,
    summarize,
)
from armlearn.harness.metrics import format_value


def _cfg(**over):
    base = {"env": "aliased_two_state", "algorithm": ["arm", "cfrplus"], "seeds": [0, 1],
            "hyperparameters": {"iterations": 3, "batch_size": 100}}
    base.update(over)
    return config_from_dict(base)


def _row(step, value, **extra):
    return {"iteration": step, "env_steps": step, "mean_return": value,
            "exact_return": float("nan"), "max_abs_advantage": 0.0, "mean_entropy": 0.0, **extra}


class TestConfig:
    def test_defaults(self):
        c = config_from_dict({"env": "gridmaze", "algorithm": "arm"})
        assert c.algorithms == ("arm",) and c.seeds == (0,) and c.approximator == "table"
        assert c.hyperparameters.iterations == 100 and c.hyperparameters.tau == 0.01
        assert c.env_options.frame_history == 1

    @pytest.mark.parametrize(
        "data, field",
        [
            ({"algorithm": "arm"}, "env"),
            ({"env": "pong", "algorithm": "arm"}, "env"),
            ({"env": "gridmaze", "algorithm": "sarsa"}, "algorithm"),
            ({"env": "gridmaze", "algorithm": "arm", "approximator": "cnn"}, "approximator"),
            ({"env": "gridmaze", "algorithm": "arm", "seeds": [1, 1]}, "seeds"),
            ({"env": "gridmaze", "algorithm": "arm", "hyperparameters": {"tau": 2.0}}, "hyperparameters.tau"),
            ({"env": "gridmaze", "algorithm": "arm", "hyperparameters": {"gamma": 0.0}}, "hyperparameters.gamma"),
            ({"env": "gridmaze", "algorithm": "arm", "hyperparameters": {"batch_size": 0}}, "hyperparameters.batch_size"),
            ({"env": "gridmaze", "algorithm": "arm", "hyperparameters": {"lr": 0.1}}, "hyperparameters.lr"),
            ({"env": "gridmaze", "algorithm": "arm", "env_options": {"occluded": True}}, "env_options.occluded"),
            ({"env": "gridmaze", "algorithm": "arm", "colour": "red"}, "colour"),
        ],
    )
    def test_errors_name_the_field(self, data, field):
        with pytest.raises(ConfigError) as info:
            config_from_dict(data)
        assert info.value.field == field

    def test_load_reports_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{oops")
        with pytest.raises(ConfigError) as info:
            load_config(p)
        assert info.value.field == "<file>" and "line 1" in str(info.value)

    def test_round_trip(self, tmp_path):
        c = _cfg()
        p = tmp_path / "c.json"
        p.write_text(json.dumps(c.to_dict()))
        assert load_config(p) == c


class TestMetrics:
    def test_overall_regret_examples(self):
        trace = [_row(i, 1.0) for i in range(1, 4)]
        assert overall_regret(trace, 1.0) == 0.0
        trace = [_row(1, 0.5), _row(2, 0.75), _row(3, 1.0)]
        assert overall_regret(trace, 1.0) == pytest.approx(0.75, abs=1e-15)

    def test_overall_regret_prefers_exact(self):
        trace = [_row(1, 0.0, exact_return=1.0)]
        assert overall_regret(trace, 1.0) == 0.0
        assert overall_regret(trace, 1.0, prefer_exact=False) == 1.0

    def test_auc_examples(self):
        assert auc([_row(s, 0.3) for s in (0, 10, 40)]) == pytest.approx(0.3, abs=1e-15)
        assert auc([_row(s, s / 100) for s in range(0, 101, 10)]) == pytest.approx(0.5, abs=1e-15)
        assert auc([_row(5, 0.7)]) == 0.7

    def test_auc_skips_missing(self):
        trace = [_row(0, float("nan")), _row(10, 1.0), _row(20, 1.0)]
        assert auc(trace) == 1.0
        with pytest.raises(ValueError):
            auc([_row(0, float("nan"))])

    def test_summary_mean_std(self):
        runs = {"a_seed0": [_row(1, 1.0)], "a_seed1": [_row(1, 3.0)], "b_seed0": [_row(1, 5.0)]}
        rows = summarize(runs, {"a_seed0": "a", "a_seed1": "a", "b_seed0": "b"})
        a, b = rows
        assert (a["algorithm"], a["n_runs"], a["mean_return_mean"], a["mean_return_std"]) == ("a", 2, 2.0, 1.0)
        assert (b["mean_return_mean"], b["mean_return_std"]) == (5.0, 0.0)

    def test_plot_data_interpolates_misaligned_grids(self):
        runs = {"x0": [_row(0, 0.0), _row(100, 1.0)], "x1": [_row(0, 0.0), _row(50, 1.0), _row(100, 1.0)]}
        rows = emit_plot_data(runs, {"x0": "x", "x1": "x"})
        assert [r["env_steps"] for r in rows] == [0.0, 50.0, 100.0]
        assert rows[1]["mean"] == pytest.approx(0.75) and rows[1]["std"] == pytest.approx(0.25)

    def test_format(self):
        assert format_value(float("nan")) == "" and format_value(0.1) == "0.1" and format_value(3) == "3"


class TestRunner:
    def test_outputs(self, tmp_path):
        result = run_experiment(_cfg(), tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == sorted([
            "arm_seed0.csv", "arm_seed1.csv", "cfrplus_seed0.csv", "cfrplus_seed1.csv",
            "runs.csv", "summary.csv", "plot_data.csv", "config.json",
        ])
        assert not result.failed
        rows = read_csv(tmp_path / "arm_seed0.csv")
        assert [r["iteration"] for r in rows] == [1, 2, 3]
        assert all(r["env_steps"] >= 100 * r["iteration"] for r in rows)
        summary = read_csv(tmp_path / "summary.csv")
        assert {r["algorithm"] for r in summary} == {"arm", "cfrplus"}

    def test_bitwise_rerun(self, tmp_path):
        run_experiment(_cfg(), tmp_path / "a")
        run_experiment(_cfg(), tmp_path / "b")
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name

    def test_failed_run_is_marked(self, tmp_path):
        cfg = config_from_dict({"env": "gridmaze", "algorithm": "arm", "env_options": {"maze": "no/such/maze.txt"},
                                "hyperparameters": {"iterations": 1, "batch_size": 10}})
        result = run_experiment(cfg, tmp_path)
        assert len(result.failed) == 1
        manifest = read_csv(tmp_path / "runs.csv")
        assert manifest[0]["status"] == "failed" and manifest[0]["message"]
        assert not (tmp_path / "summary.csv").exists()

    def test_report_rebuilds(self, tmp_path):
        run_experiment(_cfg(), tmp_path)
        before = (tmp_path / "summary.csv").read_bytes()
        (tmp_path / "summary.csv").unlink()
        report(tmp_path)
        assert (tmp_path / "summary.csv").read_bytes() == before

    def test_dqn_and_a2c_rows(self, tmp_path):
        cfg = _cfg(algorithm=["dqn", "a2c"], seeds=[0])
        run_experiment(cfg, tmp_path)
        for name in ("dqn_seed0.csv", "a2c_seed0.csv"):
            rows = read_csv(tmp_path / name)
            assert len(rows) == 3 and not math.isnan(rows[-1]["exact_return"])
        assert [r["env_steps"] for r in read_csv(tmp_path / "dqn_seed0.csv")] == [100, 200, 300]

    def test_process_pool_matches_serial(self, tmp_path):
        run_experiment(_cfg(), tmp_path / "serial")
        run_experiment(_cfg(processes=2), tmp_path / "pool")
        for name in ("arm_seed1.csv", "summary.csv"):
            assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()
