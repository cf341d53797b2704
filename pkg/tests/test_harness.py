"""Experiment orchestration: config validation, metrics, determinism, CLI."""

import filecmp
import subprocess
import sys

import numpy as np
import pytest

from isac_mp_sim.cli import main as cli_main
from isac_mp_sim.config import ConfigError, RunConfig, config_from_dict, load_config, preset_config
from isac_mp_sim.harness import MetricsRow, ExperimentResult, run_experiment, write_metrics


def tiny_cfg(**kw):
    cfg = RunConfig()
    cfg.run.seed = 7
    cfg.run.realizations = 2
    cfg.run.slots = 3
    for key, value in kw.items():
        section, _, name = key.partition("__")
        setattr(getattr(cfg, section), name, value)
    return cfg


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"protocol": {"powur_dbm": 30}})

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"protcol": {}})

    def test_seed_required(self):
        with pytest.raises(ConfigError):
            RunConfig().validate()

    def test_mode_validated(self):
        cfg = tiny_cfg()
        cfg.run.mode = "psychic"
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_load_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('[run]\nseed = 3\nslots = 5\n[protocol]\npower_dbm = 20.0\n')
        cfg = load_config(path)
        assert cfg.run.seed == 3
        assert cfg.run.slots == 5
        assert cfg.protocol.power_dbm == 20.0

    def test_preset_overlay(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('preset = "paper-fig5"\n[run]\nseed = 1\n[protocol]\npower_dbm = 10.0\n')
        cfg = load_config(path)
        assert cfg.protocol.q1 == 12
        assert cfg.protocol.power_dbm == 10.0

    def test_sigma_from_psd(self):
        cfg = tiny_cfg()
        expected = np.sqrt(10 ** ((-174.0 - 30) / 10) * cfg.protocol.subcarrier_spacing_hz)
        assert cfg.sigma_z == pytest.approx(expected)

    def test_power_conversion(self):
        cfg = tiny_cfg()
        cfg.protocol.power_dbm = 30.0
        assert cfg.power_w == pytest.approx(1.0)


class TestMetrics:
    def test_perfect_estimates_zero(self):
        rows = [MetricsRow(0, 1, 0, 0.0, 0.0, 0.0, 0.5, 1.0)]
        res = ExperimentResult(rows=rows, diverged_realizations=0, realizations=1)
        summary = res.summary()
        assert summary[0]["position_rmse_m"] == 0.0
        assert summary[0]["symbol_mse"] == 0.0

    def test_constant_offset_rmse(self):
        rows = [MetricsRow(0, t, 0, 1.0, 0.0, 0.0, 0.5, 1.0) for t in range(10)]
        res = ExperimentResult(rows=rows, diverged_realizations=0, realizations=1)
        summary = res.summary()
        assert summary[0]["position_rmse_m"] == pytest.approx(1.0)
        assert summary[0]["position_mean_err_m"] == pytest.approx(1.0)

    def test_duplicate_path_oracle(self):
        """Summary aggregation cross-checked against a direct recomputation."""
        rng = np.random.default_rng(0)
        rows = [MetricsRow(i, t, 0, float(rng.uniform(0, 2)), 0.0,
                           float(rng.uniform(0, 1)), 0.5, 1.0)
                for i in range(4) for t in range(5)]
        res = ExperimentResult(rows=rows, diverged_realizations=0, realizations=4)
        summary = res.summary()[0]
        pos = np.array([r.position_rmse_m for r in rows])
        assert summary["position_rmse_m"] == pytest.approx(
            float(np.sqrt(np.mean(pos ** 2))), abs=1e-12)
        assert summary["symbol_mse"] == pytest.approx(
            float(np.mean([r.symbol_mse for r in rows])), abs=1e-12)


class TestEndToEnd:
    def test_smoke_run_and_outputs(self, tmp_path):
        cfg = tiny_cfg()
        result = run_experiment(cfg)
        assert len(result.rows) == 2 * 3 * cfg.n_users
        write_metrics(result, tmp_path)
        text = (tmp_path / "metrics.csv").read_text()
        assert text.startswith("# isac-mp-sim schema v1\n")
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "timing.csv").exists()

    def test_determinism_byte_identical(self, tmp_path):
        cfg = tiny_cfg()
        for sub in ("a", "b"):
            write_metrics(run_experiment(tiny_cfg()), tmp_path / sub)
        assert filecmp.cmp(tmp_path / "a" / "metrics.csv",
                           tmp_path / "b" / "metrics.csv", shallow=False)
        assert filecmp.cmp(tmp_path / "a" / "summary.csv",
                           tmp_path / "b" / "summary.csv", shallow=False)

    def test_different_seeds_differ(self):
        r1 = run_experiment(tiny_cfg())
        cfg2 = tiny_cfg()
        cfg2.run.seed = 8
        r2 = run_experiment(cfg2)
        a = [r.position_rmse_m for r in r1.rows]
        b = [r.position_rmse_m for r in r2.rows]
        assert a != b

    def test_pilot_mode_zero_symbol_mse(self):
        cfg = tiny_cfg()
        cfg.run.mode = "pilot"
        res = run_experiment(cfg)
        assert all(r.symbol_mse < 1e-20 for r in res.rows)

    def test_trace_rows_collected(self):
        cfg = tiny_cfg()
        cfg.run.realizations = 1
        cfg.run.slots = 2
        res = run_experiment(cfg, collect_trace=True)
        assert res.trace_rows
        assert {"realization", "slot", "outer", "user",
                "position_error_m"} <= set(res.trace_rows[0])


class TestCli:
    def test_run_with_preset(self, tmp_path):
        code = cli_main(["run", "--preset", "desk", "--seed", "5", "--out",
                         str(tmp_path / "out"), "--realizations", "1",
                         "--slots", "2"])
        assert code == 0
        assert (tmp_path / "out" / "metrics.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[protocol]\npowur_dbm = 3\n")
        code = cli_main(["run", "--config", str(bad), "--seed", "1",
                         "--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_config_and_preset(self, tmp_path):
        code = cli_main(["run", "--seed", "1", "--out", str(tmp_path / "o")])
        assert code == 2

    def test_sweep_outputs(self, tmp_path):
        code = cli_main(["run", "--preset", "desk", "--seed", "5",
                         "--out", str(tmp_path / "out"), "--realizations", "1",
                         "--slots", "2", "--sweep", "protocol.power_dbm=20,30"])
        assert code == 0
        assert (tmp_path / "out" / "sweep_protocol_power_dbm_20" / "metrics.csv").exists()
        assert (tmp_path / "out" / "sweep_protocol_power_dbm_30" / "metrics.csv").exists()

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "isac_mp_sim.cli", "run", "--preset", "desk",
             "--seed", "2", "--out", str(tmp_path / "o"), "--realizations", "1",
             "--slots", "1"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
