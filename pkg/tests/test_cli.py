"""Command-line front end: schema, determinism, artifacts, exit codes."""

import json
import os

import numpy as np
import pytest

from memax import ConfigError, RunConfig, default_config_dict
from memax.cli import main
from memax.reporting import file_hash


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(default_config_dict()))
    return str(path)


class TestConfig:
    def test_unknown_key_rejected(self):
        raw = default_config_dict()
        raw["grid"]["n_cellz"] = [4, 4, 4]
        with pytest.raises(ConfigError, match="grid.n_cellz"):
            RunConfig.from_dict(raw)

    def test_schema_version_required(self):
        raw = default_config_dict()
        raw["schema_version"] = 99
        with pytest.raises(ConfigError, match="schema_version"):
            RunConfig.from_dict(raw)

    def test_tolerances_defaulted(self):
        cfg = RunConfig.from_dict(default_config_dict())
        tol = cfg.tolerances()
        assert tol["wrap_tol"] == 1e-8
        assert tol["picard_tol"] == 1e-10

    def test_sigma_needs_model(self):
        raw = default_config_dict()
        raw["material"]["sigma"] = 0.5
        with pytest.raises(ConfigError, match="dl_sigma"):
            RunConfig.from_dict(raw).material()

    def test_hash_stable(self):
        c1 = RunConfig.from_dict(default_config_dict())
        c2 = RunConfig.from_dict(default_config_dict())
        assert c1.content_hash() == c2.content_hash()


class TestCLI:
    def test_empty_invocation_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_config_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--rho", "2.0", "--out", "/tmp/x"])
        assert exc.value.code == 2

    def test_scan_and_solve(self, config_path, tmp_path):
        rc = main(["scan", "--config", config_path, "--nu", "0.02",
                   "--out", str(tmp_path / "scan")])
        assert rc == 0
        scan = json.loads((tmp_path / "scan" / "scan.json").read_text())
        assert scan["scans"]["law0"]["c_min"] > 0  # mod-DL certifies here
        assert scan["manifest"]["config_hash"]

        rc = main(["solve", "--config", config_path, "--rho", "2.0",
                   "--out", str(tmp_path / "solve")])
        assert rc == 0
        rep = json.loads((tmp_path / "solve" / "solve_report.json").read_text())
        assert rep["report"]["c_min_line"] > 0
        assert rep["manifest"]["constants"]["c_min_line"] > 0
        assert (tmp_path / "solve" / "solution.sig").exists()

    def test_deterministic_reruns(self, config_path, tmp_path):
        for d in ("a", "b"):
            rc = main(["solve", "--config", config_path, "--rho", "2.0",
                       "--out", str(tmp_path / d)])
            assert rc == 0
        for name in ("solve_report.json", "solution.sig"):
            assert file_hash(str(tmp_path / "a" / name)) == \
                file_hash(str(tmp_path / "b" / name))

    def test_picard_certificate(self, config_path, tmp_path):
        raw = default_config_dict()
        raw["nonlinearity"] = {"kind": "saturable", "k": 3, "tau": 1.0,
                               "kernel": {"alpha": 0.8, "gamma": 1.5, "omega0": 3.0}}
        path = tmp_path / "nl.json"
        path.write_text(json.dumps(raw))
        rc = main(["picard", "--config", str(path), "--rho", "2.0",
                   "--out", str(tmp_path / "picard")])
        assert rc == 0
        cert = json.loads((tmp_path / "picard" / "certificate.json").read_text())
        c = cert["certificate"]
        assert c["converged"] is True
        assert c["theoretical_bound"] < 1.0
        assert c["empirical_ratio"] <= c["theoretical_bound"] * 1.05
        for key in ("L_kappa", "kappa_at_0plus", "q_lip", "c_min_line"):
            assert key in cert["manifest"]["constants"]

    def test_history_roundtrip(self, config_path, tmp_path, bundle4):
        from memax import TimeGrid, WeightedSignal, write_signal

        # store a small history container ending at t = 0
        grid = TimeGrid(-1.0, 1.0 / 32.0, 33)
        vals = np.outer(np.exp(grid.times), np.ones(bundle4.n_state))
        write_signal(WeightedSignal(grid, 0.0, vals), str(tmp_path / "hist.sig"))
        rc = main(["history", "--in", str(tmp_path / "hist.sig"),
                   "--config", config_path, "--rho", "1.0",
                   "--out", str(tmp_path / "hist_out")])
        assert rc == 0
        rep = json.loads((tmp_path / "hist_out" / "history_report.json").read_text())
        assert "compatibility_residual" in rep
        assert (tmp_path / "hist_out" / "Phi.sig").exists()
        assert (tmp_path / "hist_out" / "Psi.sig").exists()

    def test_stability_refuses_plain_dl_strict(self, tmp_path):
        raw = default_config_dict()
        raw["material"] = {"model": "dl", "eps0": 1.0,
                           "terms": [{"alpha": 1.0, "gamma": 1.0, "omega0": 2.0}],
                           "mu": [1.0, 1.0]}
        raw["time"] = {"t_start": -4.0, "dt": 0.25, "n_samples": 1024}
        path = tmp_path / "dl.json"
        path.write_text(json.dumps(raw))
        rc = main(["--strict", "stability", "--config", str(path), "--nu", "0.02",
                   "--out", str(tmp_path / "stab")])
        assert rc == 1
        rep = json.loads((tmp_path / "stab" / "stability.json").read_text())
        assert "refused" in rep

    def test_stability_mod_dl_runs(self, tmp_path):
        raw = default_config_dict()
        raw["time"] = {"t_start": -4.0, "dt": 0.25, "n_samples": 1024}
        path = tmp_path / "mod.json"
        path.write_text(json.dumps(raw))
        rc = main(["stability", "--config", str(path),
                   "--out", str(tmp_path / "stab")])
        assert rc == 0
        rep = json.loads((tmp_path / "stab" / "stability.json").read_text())
        assert rep["certificate"]["certified"] is True
        assert rep["fits"] and rep["fits"][0]["r_squared"] > 0.99
        csvs = [f for f in os.listdir(tmp_path / "stab") if f.endswith(".csv")]
        assert csvs
        text = (tmp_path / "stab" / csvs[0]).read_text()
        assert text.startswith("#")  # documented columns

    def test_oracle_run(self, config_path, tmp_path):
        rc = main(["oracle", "--config", config_path,
                   "--out", str(tmp_path / "oracle")])
        assert rc == 0
        assert (tmp_path / "oracle" / "oracle.sig").exists()


@pytest.mark.slow
class TestMatrixCommand:
    def test_default_battery(self, tmp_path, capsys):
        rc = main(["matrix", "--battery", "default", "--seed", "5",
                   "--out", str(tmp_path / "matrix")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "dl" in out and "mod_dl" in out
        rows = json.loads((tmp_path / "matrix" / "capability.json").read_text())["rows"]
        by = {r["model"]: r for r in rows}
        assert by["dl"]["wp0"] and not by["dl"]["es0"]
        assert by["mod_dl"]["wp0"] and by["mod_dl"]["es0"]
        assert by["dl_sigma"]["wp0"] and by["dl_sigma"]["es0"]


class TestPicardBall:
    def test_ball_radius_flag(self, tmp_path):
        raw = default_config_dict()
        raw["nonlinearity"] = {"kind": "saturable", "k": 3, "tau": 1.0,
                               "kernel": {"alpha": 0.8, "gamma": 1.5, "omega0": 3.0}}
        raw["source"]["amplitude"] = 0.01
        path = tmp_path / "nl.json"
        path.write_text(json.dumps(raw))
        rc = main(["picard", "--config", str(path), "--rho", "2.0",
                   "--ball-radius", "auto", "--out", str(tmp_path / "ball")])
        assert rc == 0
        cert = json.loads((tmp_path / "ball" / "certificate.json").read_text())
        assert cert["certificate"]["converged"] is True
        assert "radius" in cert["certificate"]["constants"]
