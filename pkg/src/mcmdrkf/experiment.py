"""Monte-Carlo tracking comparison and gamma tuning.

The heavy per-step work (robust solves, Riccati recursions, fusion-weight
searches) depends only on the model and the configuration, never on the
measurements, so each method's gain/covariance schedule is computed once and
replayed across all Monte-Carlo runs. The replays use the same arithmetic as
the per-step filter functions, so a scheduled trajectory matches a direct
step-by-step run bit for bit.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EstimationError, InvalidInput, SingularBlock
from .estimator import evaluate_mse, posterior_cov, solve_static_estimator
from .filters import (
    FilterState,
    StateSpaceModel,
    _ci_weights,
    _information,
    predicted_state_cov,
    robust_step_estimator,
)
from .linalg import BlockLayout, min_eigenvalue, schur_trace, spectral_norm, symmetrize
from .simulate import ExperimentConfig, _shaping, simulate_truth
from .solver import SolverConfig, brute_force_worst_case
from .uncertainty import (
    GaussianMoments,
    SensorConstraint,
    UncertaintySet,
    assemble_nominal_joint,
    random_feasible_second_moment,
)

#: Solver settings used for the per-step robust updates inside the harness.
FILTER_SOLVER = SolverConfig(max_iter=150, obj_tol=1e-7, feas_tol=1e-8)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
SURFACE_FILE = "gamma_surface.csv"
PLOT_FILE = "plot.gp"
TRAJECTORY_FILE = "trajectory.csv"


@dataclass
class MseTable:
    """Per-method MSE trajectories (steps x n) and their time averages."""

    methods: tuple[str, ...]
    per_time: dict[str, np.ndarray]

    def averages(self) -> dict[str, np.ndarray]:
        return {m: self.per_time[m].mean(axis=0) for m in self.methods}


# --- gain/covariance schedules -------------------------------------------


@dataclass
class _KfSchedule:
    h: np.ndarray
    gains: list[np.ndarray]
    covs: list[np.ndarray]


def _kf_schedule(model: StateSpaceModel, steps: int) -> _KfSchedule:
    """Kalman gain and posterior covariance at every step (Joseph form)."""
    h = model.stacked_h()
    r = model.block_r()
    eye = np.eye(model.n)
    v = model.V0.copy()
    gains: list[np.ndarray] = []
    covs: list[np.ndarray] = []
    for _ in range(steps):
        p_pred = predicted_state_cov(model, v)
        s_in = symmetrize(h @ p_pred @ h.T + r)
        if min_eigenvalue(s_in) <= 1e-12 * (1.0 + spectral_norm(s_in)):
            raise SingularBlock("innovation covariance singular in gain schedule")
        k = np.linalg.solve(s_in, h @ p_pred).T
        i_kh = eye - k @ h
        v = symmetrize(i_kh @ p_pred @ i_kh.T + k @ r @ k.T)
        gains.append(k)
        covs.append(v)
    return _KfSchedule(h=h, gains=gains, covs=covs)


@dataclass
class _MdrkfSchedule:
    hs: list[np.ndarray]
    gains: list[np.ndarray]
    covs: list[np.ndarray]


def _mdrkf_schedule(
    model: StateSpaceModel,
    gammas: tuple[float, float, float],
    cfg: SolverConfig,
    steps: int,
) -> _MdrkfSchedule:
    """Robust gains A_t and posterior covariances V_t for every step.

    The robust update's covariance recursion is measurement-independent, so
    this runs the solver once per step (warm started from the previous step's
    least-favorable moment) and shares the result across all runs.
    """
    state = FilterState(xhat=np.zeros(model.n), V=model.V0.copy(), t=0)
    gains: list[np.ndarray] = []
    covs: list[np.ndarray] = []
    for _ in range(steps):
        est = robust_step_estimator(model, state, gammas, cfg)
        v = symmetrize(posterior_cov(est))
        gains.append(est.A)
        covs.append(v)
        state = FilterState(xhat=state.xhat, V=v, t=state.t + 1, joint_cov=est.sstar)
    return _MdrkfSchedule(hs=[h for h, _ in model.sensors], gains=gains, covs=covs)


@dataclass
class _CiSchedule:
    locals: list[_KfSchedule]
    weights: list[np.ndarray]
    fuse_mats: list[list[np.ndarray]]  # per t, per sensor: V_fused w_i V_i^{-1}
    covs: list[np.ndarray]
    slices: list[slice]


def _ci_schedule(model: StateSpaceModel, steps: int) -> _CiSchedule:
    locs = [_kf_schedule(model.sensor_submodel(i), steps) for i in range(model.p)]
    weights: list[np.ndarray] = []
    fuse_mats: list[list[np.ndarray]] = []
    covs: list[np.ndarray] = []
    for t in range(steps):
        infos = np.stack(
            [_information(locs[i].covs[t], f"local V_{i}") for i in range(model.p)]
        )
        w = _ci_weights(infos, resolution=1e-3, coarse=0.02)
        j = np.einsum("k,kij->ij", w, infos)
        vf = symmetrize(np.linalg.inv(j))
        weights.append(w)
        fuse_mats.append([vf @ (w[i] * infos[i]) for i in range(model.p)])
        covs.append(vf)
    offs = np.cumsum([0] + list(model.m))
    slices = [slice(int(offs[i]), int(offs[i + 1])) for i in range(model.p)]
    return _CiSchedule(locals=locs, weights=weights, fuse_mats=fuse_mats, covs=covs, slices=slices)


def _build_schedules(
    cfg: ExperimentConfig, solver_cfg: SolverConfig | None = None
) -> dict[str, object]:
    solver_cfg = solver_cfg or FILTER_SOLVER
    model = cfg.model
    schedules: dict[str, object] = {}
    for method in cfg.methods:
        try:
            if method == "kf1":
                schedules[method] = _kf_schedule(model.sensor_submodel(0), cfg.steps)
            elif method == "ckf":
                schedules[method] = _kf_schedule(model, cfg.steps)
            elif method == "ci":
                schedules[method] = _ci_schedule(model, cfg.steps)
            elif method == "mcmdrkf":
                schedules[method] = _mdrkf_schedule(
                    model, cfg.gammas(), solver_cfg, cfg.steps
                )
        except EstimationError as err:
            raise type(err)(f"method {method}: {err}") from err
    return schedules


# --- per-run replays -------------------------------------------------------


def _replay_kf(sched: _KfSchedule, model: StateSpaceModel, y: np.ndarray) -> np.ndarray:
    x = model.x0hat.copy()
    out = np.empty((y.shape[0], model.n))
    for t in range(y.shape[0]):
        xbar = model.F @ x
        x = xbar + sched.gains[t] @ (y[t] - sched.h @ xbar)
        out[t] = x
    return out


def _replay_mdrkf(
    sched: _MdrkfSchedule, model: StateSpaceModel, y: np.ndarray
) -> np.ndarray:
    x = model.x0hat.copy()
    out = np.empty((y.shape[0], model.n))
    for t in range(y.shape[0]):
        xbar = model.F @ x
        mu_y = np.concatenate([h @ xbar for h in sched.hs])
        a = sched.gains[t]
        x = a @ y[t] + (xbar - a @ mu_y)
        out[t] = x
    return out


def _replay_ci(sched: _CiSchedule, model: StateSpaceModel, y: np.ndarray) -> np.ndarray:
    xs = [model.x0hat.copy() for _ in range(model.p)]
    out = np.empty((y.shape[0], model.n))
    for t in range(y.shape[0]):
        for i in range(model.p):
            loc = sched.locals[i]
            xbar = model.F @ xs[i]
            xs[i] = xbar + loc.gains[t] @ (y[t, sched.slices[i]] - loc.h @ xbar)
        out[t] = sum(sched.fuse_mats[t][i] @ xs[i] for i in range(model.p))
    return out


def _replay(method: str, sched, model: StateSpaceModel, meas: np.ndarray) -> np.ndarray:
    if method == "kf1":
        m0 = model.m[0]
        return _replay_kf(sched, model, meas[:, :m0])
    if method == "ckf":
        return _replay_kf(sched, model, meas)
    if method == "ci":
        return _replay_ci(sched, model, meas)
    if method == "mcmdrkf":
        return _replay_mdrkf(sched, model, meas)
    raise InvalidInput(f"unknown method {method!r}")


def _run_squared_errors(
    cfg: ExperimentConfig, schedules: dict, run: int, shape
) -> dict[str, np.ndarray]:
    truth, meas = simulate_truth(cfg, run, _shape=shape)
    out = {}
    for method, sched in schedules.items():
        try:
            est = _replay(method, sched, cfg.model, meas)
        except EstimationError as err:
            raise type(err)(f"method {method}, run {run}: {err}") from err
        out[method] = (est - truth) ** 2
    return out


def _accumulate_mse(
    cfg: ExperimentConfig,
    schedules: dict,
    run_indices: range,
    threads: int = 1,
) -> dict[str, np.ndarray]:
    shape = _shaping(cfg.model)
    sums = {m: np.zeros((cfg.steps, cfg.model.n)) for m in schedules}

    def _consume(results) -> None:
        # Run order is preserved, so the summation order (and hence the output
        # bytes) is independent of the worker count.
        for res in results:
            for method, sq in res.items():
                sums[method] += sq

    if threads <= 1:
        _consume(_run_squared_errors(cfg, schedules, r, shape) for r in run_indices)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            _consume(
                pool.map(lambda r: _run_squared_errors(cfg, schedules, r, shape), run_indices)
            )
    return {m: s / len(run_indices) for m, s in sums.items()}


# --- output files -----------------------------------------------------------


def _write_results(path: Path, table: MseTable) -> None:
    lines = ["t,method,component,mse"]
    steps = next(iter(table.per_time.values())).shape[0]
    for t in range(steps):
        for method in table.methods:
            row = table.per_time[method][t]
            for comp, v in enumerate(row):
                lines.append(f"{t + 1},{method},{comp},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_summary(path: Path, table: MseTable) -> None:
    lines = ["method,component,avg_mse"]
    avgs = table.averages()
    for method in table.methods:
        for comp, v in enumerate(avgs[method]):
            lines.append(f"{method},{comp},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_plot_script(path: Path, methods: tuple[str, ...]) -> None:
    method_list = " ".join(methods)
    path.write_text(
        "# gnuplot script: position MSE versus time per method\n"
        "set datafile separator \",\"\n"
        "set logscale y\n"
        "set xlabel \"t\"\n"
        "set ylabel \"position MSE\"\n"
        "set key outside\n"
        f"methods = \"{method_list}\"\n"
        "plot for [m in methods] \"results.csv\" skip 1 "
        "using 1:((strcol(2) eq m) && (column(3) == 0) ? column(4) : NaN) "
        "with lines title m\n"
    )


def _write_surface(path: Path, rows: list[tuple[float, float, float]]) -> None:
    lines = ["gamma1,gamma2,position_mse"]
    for g1, g2, v in rows:
        lines.append(f"{g1!r},{g2!r},{v!r}")
    path.write_text("\n".join(lines) + "\n")


def write_trajectory(
    path: Path,
    cfg: ExperimentConfig,
    schedules: dict,
    run: int = 0,
) -> None:
    """Dump one run's trajectories: truth, per-method estimates, per-method Tr(V).

    Columns: t, the true state components, then for each method its estimate
    components followed by the trace of its reported posterior covariance.
    """
    model = cfg.model
    truth, meas = simulate_truth(cfg, run)
    names = list(schedules)
    estimates = {m: _replay(m, schedules[m], model, meas) for m in names}
    header = ["t"] + [f"x{i}" for i in range(model.n)]
    for m in names:
        header += [f"{m}_x{i}" for i in range(model.n)] + [f"{m}_trv"]
    lines = [",".join(header)]
    for t in range(cfg.steps):
        vals = [str(t + 1)] + [repr(float(v)) for v in truth[t]]
        for m in names:
            vals += [repr(float(v)) for v in estimates[m][t]]
            vals.append(repr(float(np.trace(schedules[m].covs[t]))))
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")


# --- top-level operations ----------------------------------------------------


def run_comparison(
    cfg: ExperimentConfig,
    threads: int = 1,
    solver_cfg: SolverConfig | None = None,
    write: bool = True,
) -> MseTable:
    """Monte-Carlo MSE comparison of the configured methods.

    Simulates ``cfg.runs`` independent trajectories, runs every method from
    the model's initial state, and averages squared errors per time step and
    state component. Writes results.csv, summary.csv, and plot.gp into
    cfg.out_dir unless ``write`` is False.
    """
    schedules = _build_schedules(cfg, solver_cfg)
    mse = _accumulate_mse(cfg, schedules, range(cfg.runs), threads=threads)
    table = MseTable(methods=cfg.methods, per_time=mse)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_results(out / RESULTS_FILE, table)
        _write_summary(out / SUMMARY_FILE, table)
        _write_plot_script(out / PLOT_FILE, cfg.methods)
        write_trajectory(out / TRAJECTORY_FILE, cfg, schedules, run=0)
    return table


def tune_gamma(
    cfg: ExperimentConfig,
    threads: int = 1,
    solver_cfg: SolverConfig | None = None,
    write: bool = True,
) -> tuple[tuple[float, float], MseTable]:
    """Grid-search the shared (gamma1, gamma2) band for the robust filter.

    Scores each grid point by the time-averaged position MSE on a held-out
    batch of runs (indices cfg.runs .. 2*cfg.runs - 1, disjoint from the
    evaluation batch) and returns the best pair together with the full
    comparison table at that optimum. The whole surface goes to
    gamma_surface.csv.
    """
    if not cfg.gamma_grid:
        raise InvalidInput("tune_gamma requires a non-empty gamma_grid")
    model = cfg.model
    shape = _shaping(model)
    held_out = [
        simulate_truth(cfg, cfg.runs + k, _shape=shape) for k in range(cfg.runs)
    ]
    surface: list[tuple[float, float, float]] = []
    best_idx = 0
    for idx, (g1, g2) in enumerate(cfg.gamma_grid):
        try:
            sched = _mdrkf_schedule(
                model, (g1, g2, cfg.gamma3), solver_cfg or FILTER_SOLVER, cfg.steps
            )
        except EstimationError as err:
            raise type(err)(f"gamma grid point ({g1}, {g2}): {err}") from err
        total = 0.0
        for truth, meas in held_out:
            est = _replay_mdrkf(sched, model, meas)
            total += float(np.mean((est[:, 0] - truth[:, 0]) ** 2))
        score = total / len(held_out)
        surface.append((g1, g2, score))
        if score < surface[best_idx][2]:
            best_idx = idx
    best = cfg.gamma_grid[best_idx]
    tuned = replace(cfg, gamma1=best[0], gamma2=best[1])
    table = run_comparison(tuned, threads=threads, solver_cfg=solver_cfg, write=write)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_surface(out / SURFACE_FILE, surface)
    return best, table


# --- static worked instance ---------------------------------------------------


def two_sensor_line_instance(
    sensors: int = 2, gamma1: float = 1.0, gamma2: float = 1.0
) -> UncertaintySet:
    """Scalar state observed by identical unit-noise sensors.

    x ~ N(0, 1) and y^i = x + v^i with unit-variance noise, so every sensor's
    nominal joint covariance is [[1, 1], [1, 2]]. With the equality band and
    two sensors the worst case fills the free cross-sensor correlation to the
    PSD boundary and raises the Bayes MSE from 1/3 to 1/2.
    """
    if not 1 <= sensors <= 3:
        raise InvalidInput("demo instance supports 1 to 3 sensors")
    cov = np.array([[1.0, 1.0], [1.0, 2.0]])
    nominal = GaussianMoments(mean=np.zeros(2), cov=cov)
    return UncertaintySet(
        layout=BlockLayout(1, (1,) * sensors),
        sensors=tuple(
            SensorConstraint(nominal=nominal, gamma1=gamma1, gamma2=gamma2)
            for _ in range(sensors)
        ),
    )


def static_demo(
    sensors: int = 2,
    gamma1: float = 1.0,
    gamma2: float = 1.0,
    rng_seed: int = 20250811,
) -> tuple[dict, bool]:
    """End-to-end check of the static estimator on the worked instance.

    Reports the nominal and worst-case MSE, the optimal rule, the grid-oracle
    gap (equality bands only), and saddle spot checks. The boolean is True
    when every check passes.
    """
    uset = two_sensor_line_instance(sensors, gamma1, gamma2)
    _, s_nom = assemble_nominal_joint(uset)
    nominal_mse = schur_trace(s_nom, 1)
    cfg = SolverConfig(max_iter=2000, obj_tol=1e-11, feas_tol=1e-9)
    est = solve_static_estimator(uset, cfg=cfg)
    jstar = est.worst_case_mse

    checks: dict[str, bool] = {}
    oracle = None
    if abs(gamma1 - 1.0) <= 1e-12 and abs(gamma2 - 1.0) <= 1e-12:
        resolution = 1e-4 if sensors <= 2 else 2e-2
        oracle = brute_force_worst_case(uset, resolution=resolution)
        checks["matches_grid_oracle"] = abs(jstar - oracle) <= 1e-3
    checks["feasibility_certified"] = est.report.feasibility_residual <= 1e-6

    rng = np.random.default_rng(rng_seed)
    qstar = GaussianMoments(mean=est.mu, cov=est.sstar)
    worst_q = -np.inf
    for _ in range(20):
        s_q = random_feasible_second_moment(uset, est.sstar, rng)
        worst_q = max(worst_q, evaluate_mse(est, GaussianMoments(est.mu, s_q)))
    checks["saddle_distribution_side"] = worst_q <= jstar + 1e-4

    best_rule = np.inf
    for _ in range(20):
        da = 0.2 * rng.standard_normal(est.A.shape)
        db = 0.2 * rng.standard_normal(est.b.shape)
        rival = replace(est, A=est.A + da, b=est.b + db)
        best_rule = min(best_rule, evaluate_mse(rival, qstar))
    checks["saddle_rule_side"] = best_rule >= jstar - 1e-9

    report = {
        "sensors": sensors,
        "gamma1": gamma1,
        "gamma2": gamma2,
        "nominal_mse": nominal_mse,
        "worst_case_mse": jstar,
        "oracle_mse": oracle,
        "A": est.A.tolist(),
        "b": est.b.tolist(),
        "worst_q_mse": worst_q,
        "best_rival_mse": best_rule,
        "estimator": est.to_dict(),
        "checks": checks,
    }
    return report, all(checks.values())
