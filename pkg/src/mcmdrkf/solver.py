"""Worst-case second-moment search.

Maximizes the concave objective Tr(S_xx - S_xy S_yy^{-1} S_yx) over the
moment-constrained uncertainty set by projected supergradient ascent. The
problem is concave over a convex compact set, so any stationary feasible
point is a global maximizer; correctness is certified against a brute-force
grid oracle on tiny instances.

The same problem also admits a linear SDP epigraph form: maximize
Tr(S_xx) - Tr(T) subject to S in the set and [[T, S_xy], [S_yx, S_yy]] >= 0
(the LMI is the Schur-complement condition T >= S_xy S_yy^+ S_yx). An
external SDP solver could consume that form directly; the first-order method
here keeps the repo self-contained at these problem sizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidInput,
    NonFiniteObjective,
    OracleUnsupported,
    ProjectionNotConverged,
    SingularBlock,
)
from .linalg import BlockLayout, min_eigenvalue, schur_trace, symmetrize
from .uncertainty import (
    UncertaintySet,
    _prepare,
    _project_feasible_exact,
    assemble_nominal_joint,
    feasibility_residual,
    project_feasible,
)

#: Length of the stall window used by the relative-objective stopping rule.
STOP_WINDOW = 5


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the projected supergradient ascent.

    step_rule:
      * "adaptive" (default): backtracking line search; the step doubles after
        an iteration that strictly improves the objective and halves (up to
        eight times within an iteration) when it would decrease it.
      * "diminishing": eta_k = eta0 / (k+1)^step_power.
      * "fixed": eta_k = step_size.
    In all rules eta0 = step_size when given, else 0.5 / ||G(S0)||_F.
    pd_floor is the minimum eigenvalue kept in S_yy while evaluating
    gradients/objectives on intermediate iterates; the floor is never written
    back into the iterate.
    """

    max_iter: int = 500
    obj_tol: float = 1e-8
    feas_tol: float = 1e-10
    step_rule: str = "adaptive"
    step_size: float | None = None
    step_power: float = 0.5
    pd_floor: float = 1e-7
    projection_max_iter: int = 500
    polish: bool = True
    trace_path: str | None = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be >= 1")
        if self.obj_tol <= 0 or self.feas_tol <= 0 or self.pd_floor <= 0:
            raise InvalidInput("tolerances must be positive")
        if self.step_rule not in ("fixed", "diminishing", "adaptive"):
            raise InvalidInput(f"unknown step_rule {self.step_rule!r}")
        if self.step_rule == "fixed" and (self.step_size is None or self.step_size <= 0):
            raise InvalidInput("fixed step rule requires step_size > 0")
        if self.step_size is not None and self.step_size <= 0:
            raise InvalidInput("step_size must be > 0")
        if not 0.5 <= self.step_power <= 1.0:
            raise InvalidInput("step_power must lie in [0.5, 1]")


@dataclass
class SolverReport:
    iterations: int
    objective: float
    feasibility_residual: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list)


def _guarded_yy(syy: np.ndarray, pd_floor: float) -> np.ndarray:
    """S_yy lifted so its smallest eigenvalue is at least pd_floor."""
    lam = min_eigenvalue(syy)
    if lam >= pd_floor:
        return syy
    return syy + (pd_floor - lam) * np.eye(syy.shape[0])


def _gradient_and_objective(
    s: np.ndarray, n: int, pd_floor: float
) -> tuple[np.ndarray, float]:
    """Supergradient and objective sharing one guarded S_yy solve."""
    sxy = s[:n, n:]
    syy = _guarded_yy(symmetrize(s[n:, n:]), pd_floor)
    a = np.linalg.solve(syy, sxy.T).T  # A* = S_xy S_yy^{-1}
    obj = float(np.trace(s[:n, :n]) - np.sum(a * sxy))
    d = s.shape[0]
    g = np.empty((d, d))
    g[:n, :n] = np.eye(n)
    g[:n, n:] = -a
    g[n:, :n] = -a.T
    g[n:, n:] = a.T @ a
    return g, obj


def supergradient(s: np.ndarray, layout: BlockLayout, eps_pd: float = 1e-9) -> np.ndarray:
    """Supergradient of the worst-case objective at joint second moment S.

    With A* = S_xy S_yy^{-1}, the matrix [[I, -A*], [-A*^T, A*^T A*]] is a
    supergradient at S: the objective is the minimum over A of a family of
    functions linear in S, attained at A*. Requires S_yy positive definite.
    """
    s = symmetrize(np.asarray(s, dtype=float))
    n = layout.n
    if s.shape[0] != layout.dim:
        raise InvalidInput(f"matrix dim {s.shape[0]} != layout dim {layout.dim}")
    if min_eigenvalue(s[n:, n:]) <= eps_pd:
        raise SingularBlock("S_yy is singular to tolerance; no supergradient")
    g, _ = _gradient_and_objective(s, n, pd_floor=0.0)
    return g


def solve_worst_case(
    uset: UncertaintySet,
    s0: np.ndarray | None = None,
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Find the least-favorable joint second moment over the uncertainty set.

    Iterates S <- project(S + eta_k * G(S)) with a deterministic backtracking
    guard (the step is halved whenever it would decrease the objective or
    overrun the projection budget) so the objective trace is monotone up to
    rounding. The ascent runs in two phases: first with the fast cyclic
    projection, then — once progress stalls — with the exact Euclidean
    (nearest-point) projection, whose fixed points are true constrained
    stationary points; stationary plus concave means globally optimal. Stops
    when the relative objective change over a 5-iteration window drops below
    obj_tol and larger probe steps cannot improve it, or at max_iter. The
    returned iterate is feasible to feas_tol.
    """
    cfg = cfg or SolverConfig()
    n = uset.layout.n
    ctx = _prepare(uset)
    if s0 is None:
        _, s0 = assemble_nominal_joint(uset)
    s, resid = project_feasible(
        s0, uset, max_iter=cfg.projection_max_iter, tol=cfg.feas_tol, _ctx=ctx
    )
    grad, obj = _gradient_and_objective(s, n, cfg.pd_floor)
    if not np.isfinite(obj):
        raise NonFiniteObjective(f"objective not finite at start: {obj}")

    if cfg.step_size is not None:
        eta0 = cfg.step_size
    else:
        gnorm = float(np.linalg.norm(grad))
        eta0 = 0.5 / gnorm if gnorm > 1e-12 else 0.5

    exact_phase = False

    def attempt(eta: float, obj: float):
        """Backtracking trial: returns (accepted state or None, final eta, clean).

        clean means the first trial step was accepted without any halving.
        """
        project = _project_feasible_exact if exact_phase else project_feasible
        slack = 1e-12 * max(1.0, abs(obj))
        last_projection_error: ProjectionNotConverged | None = None
        for attempt_idx in range(8):
            try:
                s_try, r_try = project(
                    s + eta * grad,
                    uset,
                    max_iter=cfg.projection_max_iter,
                    tol=cfg.feas_tol,
                    _ctx=ctx,
                )
            except ProjectionNotConverged as err:
                # A trial step too far for the projection budget is just a bad
                # trial: shrink and retry.
                last_projection_error = err
                eta *= 0.5
                continue
            last_projection_error = None
            g_try, f_try = _gradient_and_objective(s_try, n, cfg.pd_floor)
            if not np.isfinite(f_try):
                raise NonFiniteObjective("objective degenerated during line search")
            if f_try >= obj - slack:
                return (s_try, r_try, g_try, f_try), eta, attempt_idx == 0
            eta *= 0.5
        if last_projection_error is not None:
            raise last_projection_error
        return None, eta, False

    def stalled(obj: float) -> bool:
        """True when the window is flat and larger probe steps cannot improve."""
        nonlocal s, resid, grad
        window = trace[-(STOP_WINDOW + 1) :]
        if max(window) - min(window) > cfg.obj_tol * max(1.0, abs(obj)):
            return False
        for probe in (eta0, 4.0 * eta0, 16.0 * eta0):
            accepted, _, _ = attempt(probe, obj)
            if accepted is not None and accepted[3] > obj + cfg.obj_tol * max(
                1.0, abs(obj)
            ):
                s, resid, grad = accepted[0], accepted[1], accepted[2]
                trace.append(accepted[3])
                residuals.append(accepted[1])
                return False
        return True

    trace = [obj]
    residuals = [resid]
    converged = False
    iterations = 0
    eta_state = eta0
    since_phase_start = 0
    for k in range(cfg.max_iter):
        if cfg.step_rule == "diminishing":
            eta = eta0 / (k + 1) ** cfg.step_power
        elif cfg.step_rule == "fixed":
            eta = eta0
        else:
            eta = eta_state
        accepted, eta_used, clean = attempt(eta, obj)
        if accepted is not None:
            s, resid, grad, obj = accepted
        if cfg.step_rule == "adaptive":
            # Double after clean acceptances so the step recovers from earlier
            # backtracking; the cap keeps boundary-clamped no-progress steps
            # from inflating it without bound.
            eta_state = min(eta_used * 2.0, 16.0 * eta0) if clean else eta_used
        iterations = k + 1
        since_phase_start += 1
        trace.append(obj)
        residuals.append(resid)
        if since_phase_start > STOP_WINDOW and stalled(obj):
            obj = trace[-1]
            if not exact_phase:
                exact_phase = True
                since_phase_start = 0
                eta_state = eta0
                continue
            converged = True
            break
        obj = trace[-1]

    report = SolverReport(
        iterations=iterations,
        objective=obj,
        feasibility_residual=resid,
        converged=converged,
        objective_trace=trace,
    )
    if cfg.trace_path:
        with open(cfg.trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "feas_residual"])
            for i, (f, r) in enumerate(zip(trace, residuals)):
                writer.writerow([i, repr(f), repr(r)])
    return s, report


def _pinv_schur_objectives(s_batch: np.ndarray, n: int) -> np.ndarray:
    """Batched Tr(S_xx - S_xy S_yy^+ S_yx) via eigenvalue pseudo-inverse.

    Safe on the PSD boundary where S_yy is singular (the oracle grids include
    correlation +/-1); eigenvalues below 1e-12 * lambda_max are treated as
    exactly zero.
    """
    sxx_tr = np.trace(s_batch[:, :n, :n], axis1=1, axis2=2)
    syy = s_batch[:, n:, n:]
    syx = s_batch[:, n:, :n]
    vals, vecs = np.linalg.eigh(symmetrize_batch(syy))
    cut = 1e-12 * np.maximum(vals[:, -1:], 1e-300)
    inv_vals = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    t = vecs.transpose(0, 2, 1) @ syx
    m = vecs @ (inv_vals[:, :, None] * t)  # S_yy^+ S_yx
    quad = np.einsum("bij,bji->b", s_batch[:, :n, n:], m)
    return sxx_tr - quad


def symmetrize_batch(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.transpose(0, 2, 1))


def brute_force_worst_case(uset: UncertaintySet, resolution: float = 1e-4) -> float:
    """Grid-search oracle for tiny equality-band instances (tests only).

    Supported scope: every sensor one-dimensional with gamma1 = gamma2 = 1
    (so each sensor block is pinned to its nominal and only the cross-sensor
    correlations are free), total dimension at most 4 and at most 3 free
    parameters. Enumerates cross-correlations on a [-1, 1] grid, filters to
    PSD candidates, and returns the maximal Schur-complement trace.
    """
    layout = uset.layout
    n, p = layout.n, layout.p
    if layout.dim > 4:
        raise OracleUnsupported(f"dimension {layout.dim} > 4")
    if any(mi != 1 for mi in layout.m):
        raise OracleUnsupported("oracle requires one-dimensional sensors")
    for i, sc in enumerate(uset.sensors):
        if abs(sc.gamma1 - 1.0) > 1e-12 or abs(sc.gamma2 - 1.0) > 1e-12:
            raise OracleUnsupported(f"sensor {i} band is not the equality band")

    _, s0 = assemble_nominal_joint(uset)
    if p == 1:
        return schur_trace(s0, n)

    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    npts = int(round(2.0 / resolution)) + 1
    total = npts ** len(pairs)
    if total > 5_000_000:
        raise OracleUnsupported(
            f"grid of {total} points too large; pass a coarser resolution"
        )
    rho_axis = np.linspace(-1.0, 1.0, npts)
    grids = np.meshgrid(*[rho_axis] * len(pairs), indexing="ij")
    rho = np.stack([g.ravel() for g in grids], axis=1)  # (N, K)

    sd = np.sqrt(np.diag(s0)[n:])
    s_batch = np.broadcast_to(s0, (rho.shape[0],) + s0.shape).copy()
    for k, (i, j) in enumerate(pairs):
        oi, oj = layout.y_offset(i), layout.y_offset(j)
        val = rho[:, k] * sd[i] * sd[j]
        s_batch[:, oi, oj] = val
        s_batch[:, oj, oi] = val

    lam_min = np.linalg.eigvalsh(s_batch)[:, 0]
    scale = 1.0 + float(np.abs(s0).max())
    mask = lam_min >= -1e-12 * scale
    if not np.any(mask):
        raise OracleUnsupported("no PSD grid point found; instance malformed")
    objs = _pinv_schur_objectives(s_batch[mask], n)
    return float(objs.max())
