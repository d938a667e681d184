"""Tests for the command-line front end."""

import json

import numpy as np
import pytest

from mcmdrkf.cli import main


def write_cfg(tmp_path, **extra):
    doc = {"steps": 20, "runs": 3, "seed": 5}
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestStaticDemo:
    def test_default_passes(self, capsys):
        assert main(["static-demo"]) == 0
        out = capsys.readouterr().out
        assert "worst-case MSE" in out
        assert "FAIL" not in out

    def test_json_report(self, capsys):
        assert main(["static-demo", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["worst_case_mse"] == pytest.approx(0.5, abs=1e-3)
        assert doc["nominal_mse"] == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert all(doc["checks"].values())

    def test_json_estimator_round_trip(self, capsys):
        from mcmdrkf.estimator import AffineEstimator, estimate

        assert main(["static-demo", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        est = AffineEstimator.from_dict(doc["estimator"])
        y = np.array([0.5, -0.5])
        np.testing.assert_allclose(
            estimate(est, y), np.asarray(doc["A"]) @ y + np.asarray(doc["b"]), atol=0
        )

    def test_single_sensor_equality(self, capsys):
        assert main(["static-demo", "--sensors", "1", "--gamma1", "1", "--gamma2", "1", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["worst_case_mse"] == pytest.approx(doc["nominal_mse"], abs=1e-9)


class TestCompare:
    def test_writes_outputs(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, methods=["kf1", "ckf"])
        out = tmp_path / "res"
        assert main(["compare", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "results.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "plot.gp").exists()

    def test_json_summary(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, methods=["ckf"])
        out = tmp_path / "res"
        assert main(["compare", "--config", cfg, "--out", str(out), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "ckf" in doc["avg_mse"]
        assert len(doc["avg_mse"]["ckf"]) == 3

    def test_deterministic_bytes(self, tmp_path):
        cfg = write_cfg(tmp_path, methods=["kf1", "mcmdrkf"])
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["compare", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["compare", "--config", cfg, "--out", str(out2), "--threads", "4"]) == 0
        assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()

    def test_unknown_config_key_exits_1(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"steps": 5, "bogus": True}))
        assert main(["compare", "--config", str(path)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file_exits_1(self, tmp_path, capsys):
        assert main(["compare", "--config", str(tmp_path / "nope.json")]) == 1

    def test_numerical_failure_exits_2(self, tmp_path, capsys):
        # two identical noiseless position sensors make the stacked
        # innovation covariance singular
        doc = {
            "steps": 5, "runs": 1, "methods": ["ckf"], "beta": [0.0, 0.0],
            "model": {
                "f": [[1.0]], "g": [[1.0]], "q": [[0.0]],
                "sensors": [
                    {"h": [[1.0]], "r": [[0.0]]},
                    {"h": [[1.0]], "r": [[0.0]]},
                ],
                "x0_hat": [0.0], "v0": [[1.0]],
            },
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        assert main(["compare", "--config", str(path)]) == 2
        assert "numerical failure" in capsys.readouterr().err


class TestSimulate:
    def test_writes_truth(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "truth.csv").read_text().splitlines()
        assert lines[0] == "t,run,x0,x1,x2,y0,y1,y2"
        assert len(lines) == 1 + 20 * 3


class TestTuneGamma:
    def test_small_grid(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path, methods=["mcmdrkf"], gamma_grid=[[1.0, 1.0], [0.9, 1.2]]
        )
        out = tmp_path / "tuned"
        assert main(["tune-gamma", "--config", cfg, "--out", str(out), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert (doc["gamma1"], doc["gamma2"]) in {(1.0, 1.0), (0.9, 1.2)}
        surface = (out / "gamma_surface.csv").read_text().splitlines()
        assert len(surface) == 3

    def test_missing_grid_exits_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, methods=["mcmdrkf"])
        assert main(["tune-gamma", "--config", cfg]) == 1


class TestUsage:
    def test_unknown_command_exits_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_no_command_exits_1(self, capsys):
        assert main([]) == 1

    def test_help_exits_0(self, capsys):
        assert main(["--help"]) == 0
