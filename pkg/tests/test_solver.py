"""Tests for the worst-case second-moment solver."""

import numpy as np
import pytest

from mcmdrkf.errors import InvalidInput, OracleUnsupported, SingularBlock
from mcmdrkf.linalg import BlockLayout, schur_trace, symmetrize
from mcmdrkf.solver import (
    SolverConfig,
    brute_force_worst_case,
    solve_worst_case,
    supergradient,
)
from mcmdrkf.uncertainty import (
    GaussianMoments,
    SensorConstraint,
    UncertaintySet,
    assemble_nominal_joint,
    feasibility_residual,
    random_feasible_second_moment,
)

LINE_COV = np.array([[1.0, 1.0], [1.0, 2.0]])


def line_set(p=2, g1=1.0, g2=1.0):
    nominal = GaussianMoments(mean=np.zeros(2), cov=LINE_COV)
    return UncertaintySet(
        layout=BlockLayout(1, (1,) * p),
        sensors=tuple(SensorConstraint(nominal, g1, g2) for _ in range(p)),
    )


TIGHT = SolverConfig(max_iter=3000, obj_tol=1e-11, feas_tol=1e-9)


class TestSolverConfig:
    def test_defaults_valid(self):
        SolverConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(max_iter=0),
            dict(obj_tol=0.0),
            dict(feas_tol=-1.0),
            dict(step_rule="nope"),
            dict(step_rule="fixed"),  # fixed needs a step size
            dict(step_size=-0.1),
            dict(step_power=0.4),
            dict(step_power=1.5),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInput):
            SolverConfig(**kwargs)


class TestSupergradient:
    def test_zero_cross_block(self):
        lay = BlockLayout(2, (2,))
        s = np.diag([1.0, 2.0, 3.0, 4.0])
        g = supergradient(s, lay)
        expect = np.zeros((4, 4))
        expect[:2, :2] = np.eye(2)
        np.testing.assert_allclose(g, expect, atol=1e-14)

    def test_scalar_hand_case(self):
        lay = BlockLayout(1, (1,))
        s = np.array([[1.0, 0.5], [0.5, 1.0]])
        g = supergradient(s, lay)
        np.testing.assert_allclose(g, [[1.0, -0.5], [-0.5, 0.25]], atol=1e-14)

    def test_singular_yy(self):
        lay = BlockLayout(1, (1,))
        with pytest.raises(SingularBlock):
            supergradient(np.array([[1.0, 0.0], [0.0, 0.0]]), lay)

    def test_matches_finite_differences(self):
        # central differences of the Schur trace along random symmetric
        # directions, step 1e-6 * ||S||_F
        uset = line_set(g1=0.5, g2=2.0)
        _, s0 = assemble_nominal_joint(uset)
        rng = np.random.default_rng(31)
        lay = uset.layout
        for _ in range(10):
            s = random_feasible_second_moment(uset, s0, rng)
            if np.linalg.eigvalsh(s[1:, 1:])[0] < 1e-6:
                continue
            g = supergradient(s, lay)
            h = 1e-6 * np.linalg.norm(s)
            for _ in range(20):
                d = symmetrize(rng.standard_normal(s.shape))
                fd = (schur_trace(s + h * d, 1) - schur_trace(s - h * d, 1)) / (2 * h)
                analytic = float(np.sum(g * d))
                assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestSolveWorstCase:
    def test_singleton_set(self):
        uset = line_set(p=1)
        sstar, report = solve_worst_case(uset, cfg=TIGHT)
        np.testing.assert_allclose(sstar, LINE_COV, atol=1e-10)
        assert report.objective == pytest.approx(schur_trace(LINE_COV, 1), abs=1e-9)
        assert report.converged

    def test_two_sensor_worst_case(self):
        # free cross-correlation maxes out at +1: objective 1/2 versus the
        # nominal 1/3
        uset = line_set(p=2)
        sstar, report = solve_worst_case(uset, cfg=TIGHT)
        oracle = brute_force_worst_case(uset, resolution=1e-4)
        assert report.objective == pytest.approx(0.5, abs=1e-3)
        assert abs(report.objective - oracle) <= 1e-3
        # least-favorable correlation is +1 (cross entry 2 = sqrt(2*2))
        assert sstar[1, 2] == pytest.approx(2.0, abs=1e-3)

    def test_wider_band_does_not_decrease(self):
        _, rep_eq = solve_worst_case(line_set(p=2), cfg=TIGHT)
        _, rep_wide = solve_worst_case(line_set(p=2, g1=0.8, g2=1.2), cfg=TIGHT)
        assert rep_wide.objective >= rep_eq.objective - 1e-6

    def test_nesting_ladder_monotone(self):
        ladder = [(1.0, 1.0), (0.95, 1.1), (0.9, 1.3), (0.85, 1.6), (0.8, 2.0)]
        objs = []
        for g1, g2 in ladder:
            _, rep = solve_worst_case(line_set(p=2, g1=g1, g2=g2), cfg=TIGHT)
            objs.append(rep.objective)
        for a, b in zip(objs, objs[1:]):
            assert b >= a - 1e-6

    def test_output_certificates(self):
        for g1, g2 in [(1.0, 1.0), (0.9, 1.4)]:
            uset = line_set(p=2, g1=g1, g2=g2)
            sstar, report = solve_worst_case(uset, cfg=TIGHT)
            np.testing.assert_array_equal(sstar, sstar.T)
            assert np.linalg.eigvalsh(sstar)[0] >= -1e-10
            assert feasibility_residual(sstar, uset) <= TIGHT.feas_tol
            assert report.feasibility_residual <= TIGHT.feas_tol

    def test_trace_monotone_after_burn_in(self):
        _, report = solve_worst_case(line_set(p=2, g1=0.8, g2=1.5), cfg=TIGHT)
        tr = np.asarray(report.objective_trace[10:])
        if tr.size > 1:
            assert np.all(np.diff(tr) >= -1e-9)

    def test_deterministic(self):
        uset = line_set(p=2, g1=0.9, g2=1.3)
        s1, r1 = solve_worst_case(uset, cfg=TIGHT)
        s2, r2 = solve_worst_case(uset, cfg=TIGHT)
        np.testing.assert_array_equal(s1, s2)
        assert r1.objective == r2.objective
        assert r1.objective_trace == r2.objective_trace

    def test_trace_dump(self, tmp_path):
        path = tmp_path / "trace.csv"
        cfg = SolverConfig(max_iter=50, trace_path=str(path))
        solve_worst_case(line_set(p=2), cfg=cfg)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iter,objective,feas_residual"
        assert len(lines) >= 2


class TestBruteForceOracle:
    def test_two_sensor_value(self):
        assert brute_force_worst_case(line_set(p=2), resolution=1e-4) == pytest.approx(
            0.5, abs=1e-9
        )

    def test_single_sensor_no_free_params(self):
        assert brute_force_worst_case(line_set(p=1)) == pytest.approx(0.5, abs=1e-12)

    def test_three_sensor_corner(self):
        # identical sensors: worst case is all correlations at +1, value 1/2,
        # which sits exactly on the grid corner
        uset = line_set(p=3)
        val = brute_force_worst_case(uset, resolution=0.05)
        sstar, rep = solve_worst_case(uset, cfg=TIGHT)
        assert abs(rep.objective - val) <= 1e-3

    def test_dimension_guard(self):
        nominal = GaussianMoments(np.zeros(3), np.eye(3))
        uset = UncertaintySet(
            layout=BlockLayout(1, (2, 2)),
            sensors=(SensorConstraint(nominal, 1, 1), SensorConstraint(nominal, 1, 1)),
        )
        with pytest.raises(OracleUnsupported):
            brute_force_worst_case(uset)

    def test_band_guard(self):
        with pytest.raises(OracleUnsupported):
            brute_force_worst_case(line_set(p=2, g1=0.9, g2=1.1))

    def test_grid_size_guard(self):
        with pytest.raises(OracleUnsupported):
            brute_force_worst_case(line_set(p=3), resolution=1e-4)
