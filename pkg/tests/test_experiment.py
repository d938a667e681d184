"""Tests for the Monte-Carlo harness: schedules, comparison, tuning, outputs."""

import numpy as np
import pytest

from mcmdrkf.errors import InvalidInput
from mcmdrkf.experiment import (
    FILTER_SOLVER,
    _ci_schedule,
    _kf_schedule,
    _mdrkf_schedule,
    _replay,
    run_comparison,
    static_demo,
    tune_gamma,
)
from mcmdrkf.filters import ci_fuse, kf_step, local_kf_step, mdrkf_step
from mcmdrkf.simulate import ExperimentConfig, constant_acceleration_model, simulate_truth


def small_cfg(**kwargs):
    defaults = dict(steps=25, runs=4, out_dir="unused")
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestReplayMatchesStepApi:
    """The scheduled replays must reproduce the per-step filter functions."""

    def test_ckf(self):
        cfg = small_cfg()
        model = cfg.model
        _, meas = simulate_truth(cfg, 0)
        sched = _kf_schedule(model, cfg.steps)
        replayed = _replay("ckf", sched, model, meas)
        st = model.initial_state()
        for t in range(cfg.steps):
            st = kf_step(model, st, meas[t])
            np.testing.assert_array_equal(replayed[t], st.xhat)
            np.testing.assert_array_equal(sched.covs[t], st.V)

    def test_kf1(self):
        cfg = small_cfg()
        model = cfg.model
        _, meas = simulate_truth(cfg, 0)
        sched = _kf_schedule(model.sensor_submodel(0), cfg.steps)
        replayed = _replay("kf1", sched, model, meas)
        st = model.initial_state()
        for t in range(cfg.steps):
            st = local_kf_step(model, 0, st, meas[t, :1])
            np.testing.assert_array_equal(replayed[t], st.xhat)

    def test_mdrkf(self):
        cfg = small_cfg(steps=15)
        model = cfg.model
        _, meas = simulate_truth(cfg, 0)
        sched = _mdrkf_schedule(model, (0.9, 1.2, 0.0), FILTER_SOLVER, cfg.steps)
        replayed = _replay("mcmdrkf", sched, model, meas)
        st = model.initial_state()
        for t in range(cfg.steps):
            st = mdrkf_step(model, st, meas[t], (0.9, 1.2, 0.0), FILTER_SOLVER)
            np.testing.assert_array_equal(replayed[t], st.xhat)
            np.testing.assert_array_equal(sched.covs[t], st.V)

    def test_ci(self):
        cfg = small_cfg(steps=12)
        model = cfg.model
        _, meas = simulate_truth(cfg, 0)
        sched = _ci_schedule(model, cfg.steps)
        replayed = _replay("ci", sched, model, meas)
        locals_ = [model.initial_state() for _ in range(model.p)]
        for t in range(cfg.steps):
            ests = []
            off = 0
            for i in range(model.p):
                mi = model.m[i]
                locals_[i] = local_kf_step(model, i, locals_[i], meas[t, off : off + mi])
                ests.append((locals_[i].xhat, locals_[i].V))
                off += mi
            fused, vf = ci_fuse(ests)
            np.testing.assert_allclose(replayed[t], fused, rtol=0, atol=1e-10)
            np.testing.assert_allclose(sched.covs[t], vf, rtol=0, atol=1e-10)


class TestRunComparison:
    def test_noiseless_convergence(self, tmp_path):
        model = constant_acceleration_model(
            sensor_specs=(
                ((1.0, 0.0, 0.0), 1e-9),
                ((1.0, 0.0, 0.0), 2e-9),
                ((0.0, 1.0, 0.0), 1e-9),
            ),
            q_var=0.0,
        )
        cfg = ExperimentConfig(
            steps=300, runs=1, model=model, beta=(0.0, 0.0, 0.0),
            methods=("ckf",), out_dir=str(tmp_path),
        )
        table = run_comparison(cfg, write=False)
        series = table.per_time["ckf"][:, 0]
        assert series[-1] < series[0] / 100.0

    def test_outputs_and_schema(self, tmp_path):
        cfg = small_cfg(out_dir=str(tmp_path), methods=("kf1", "ckf"))
        table = run_comparison(cfg)
        results = (tmp_path / "results.csv").read_text().splitlines()
        assert results[0] == "t,method,component,mse"
        assert len(results) == 1 + cfg.steps * 2 * cfg.model.n
        first = results[1].split(",")
        assert first[0] == "1" and first[1] == "kf1" and first[2] == "0"
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        assert summary[0] == "method,component,avg_mse"
        assert (tmp_path / "plot.gp").exists()
        for m in cfg.methods:
            assert np.all(table.per_time[m] >= 0.0)
            np.testing.assert_allclose(
                table.averages()[m], table.per_time[m].mean(axis=0), atol=1e-12
            )

    def test_trajectory_dump(self, tmp_path):
        cfg = small_cfg(out_dir=str(tmp_path), methods=("kf1", "mcmdrkf"))
        run_comparison(cfg)
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        # t, truth components, then per method: estimates plus Tr(V)
        assert lines[0] == (
            "t,x0,x1,x2,kf1_x0,kf1_x1,kf1_x2,kf1_trv,"
            "mcmdrkf_x0,mcmdrkf_x1,mcmdrkf_x2,mcmdrkf_trv"
        )
        assert len(lines) == 1 + cfg.steps
        row = lines[1].split(",")
        assert row[0] == "1"
        assert all(np.isfinite(float(v)) for v in row[1:])

    def test_deterministic_across_invocations_and_threads(self, tmp_path):
        out1, out2, out3 = (tmp_path / x for x in ("a", "b", "c"))
        run_comparison(small_cfg(runs=6, out_dir=str(out1)), threads=1)
        run_comparison(small_cfg(runs=6, out_dir=str(out2)), threads=1)
        run_comparison(small_cfg(runs=6, out_dir=str(out3)), threads=8)
        b1 = (out1 / "results.csv").read_bytes()
        assert b1 == (out2 / "results.csv").read_bytes()
        assert b1 == (out3 / "results.csv").read_bytes()

    def test_matched_world_kf_consistency(self):
        # beta = 0: the centralized KF is exactly Bayes, so the empirical
        # position MSE should track its own reported covariance
        cfg = ExperimentConfig(
            steps=300, runs=500, beta=(0.0, 0.0, 0.0), methods=("ckf",),
            out_dir="unused",
        )
        table = run_comparison(cfg, write=False)
        emp = float(table.averages()["ckf"][0])
        sched = _kf_schedule(cfg.model, cfg.steps)
        steady = float(sched.covs[-1][0, 0])
        assert abs(emp - steady) <= 0.10 * steady

    def test_free_cross_block_price_bounded(self):
        # beta = 0, equality band: the robust filter pays for the unknown
        # correlations but stays within 15% of the centralized KF
        cfg = ExperimentConfig(
            steps=300, runs=500, beta=(0.0, 0.0, 0.0),
            methods=("ckf", "mcmdrkf"), gamma1=1.0, gamma2=1.0, out_dir="unused",
        )
        table = run_comparison(cfg, write=False)
        ckf = float(table.averages()["ckf"][0])
        mc = float(table.averages()["mcmdrkf"][0])
        assert abs(mc - ckf) <= 0.15 * ckf


class TestTuneGamma:
    def test_requires_grid(self):
        with pytest.raises(InvalidInput):
            tune_gamma(small_cfg())

    def test_singleton_grid(self, tmp_path):
        cfg = small_cfg(
            gamma_grid=((1.0, 1.0),), methods=("mcmdrkf",), out_dir=str(tmp_path)
        )
        best, table = tune_gamma(cfg)
        assert best == (1.0, 1.0)
        assert "mcmdrkf" in table.per_time
        surface = (tmp_path / "gamma_surface.csv").read_text().splitlines()
        assert surface[0] == "gamma1,gamma2,position_mse"
        assert len(surface) == 2

    def test_no_mismatch_prefers_equality_band(self, tmp_path):
        cfg = ExperimentConfig(
            steps=80, runs=30, beta=(0.0, 0.0, 0.0), methods=("mcmdrkf",),
            gamma_grid=((1.0, 1.0), (0.9, 1.3), (0.8, 1.6)), out_dir=str(tmp_path),
        )
        best, _ = tune_gamma(cfg)
        assert best == (1.0, 1.0)
        surface = (tmp_path / "gamma_surface.csv").read_text().splitlines()[1:]
        assert len(surface) == 3
        for line in surface:
            val = float(line.split(",")[2])
            assert np.isfinite(val) and val >= 0.0


class TestStaticDemo:
    def test_default_instance(self):
        report, ok = static_demo()
        assert ok
        assert report["nominal_mse"] == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert report["worst_case_mse"] == pytest.approx(0.5, abs=1e-3)
        assert report["oracle_mse"] == pytest.approx(0.5, abs=1e-9)

    def test_single_sensor_equality(self):
        report, ok = static_demo(sensors=1)
        assert ok
        assert report["worst_case_mse"] == pytest.approx(report["nominal_mse"], abs=1e-9)

    def test_json_serializable(self):
        import json

        report, _ = static_demo(sensors=1)
        json.dumps(report)
