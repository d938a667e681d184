"""Recursive filters: the moment-constrained robust multi-sensor filter plus
the baselines it is compared against (centralized Kalman filter, per-sensor
local Kalman filters, covariance-intersection fusion).

The robust step pushes the previous posterior through the nominal transition
kernel to get one predicted joint Gaussian per sensor, wraps those in a
marginal uncertainty set with the configured band multipliers, solves the
static minimax problem, and reads the posterior mean/covariance off the
least-favorable joint second moment:

    xhat = mu_x + S*_xy (S*_yy)^{-1} (y - mu_y)
    V    = S*_xx - S*_xy (S*_yy)^{-1} S*_yx

With one sensor and the equality band (gamma1 = gamma2 = 1) the feasible set
is the predicted Gaussian itself and the step reduces exactly to the
canonical Kalman update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InvalidInput, SingularBlock
from .estimator import posterior_cov, solve_static_estimator
from .linalg import (
    BlockLayout,
    min_eigenvalue,
    pd_sqrt_pair,
    psd_sqrt,
    spectral_norm,
    symmetrize,
)
from .solver import SolverConfig
from .uncertainty import (
    GaussianMoments,
    SensorConstraint,
    UncertaintySet,
    assemble_nominal_joint,
)


def _psd_check(m: np.ndarray, name: str) -> np.ndarray:
    m = symmetrize(np.asarray(m, dtype=float))
    if min_eigenvalue(m) < -1e-10 * (1.0 + spectral_norm(m)):
        raise InvalidInput(f"{name} must be PSD")
    return m


@dataclass(frozen=True)
class StateSpaceModel:
    """Time-invariant linear system with p sensors.

    x_t = F x_{t-1} + G w_t,   y^i_t = H_i x_t + v^i_t,
    w ~ N(0, Q), v^i ~ N(0, R_i) under the nominal model. The step functions
    take the model on every call, so a time-varying extension only needs a
    per-step model instance.
    """

    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    sensors: tuple[tuple[np.ndarray, np.ndarray], ...]
    x0hat: np.ndarray
    V0: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.F, dtype=float)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise InvalidInput(f"F must be square, got {f.shape}")
        n = f.shape[0]
        g = np.asarray(self.G, dtype=float)
        if g.ndim == 1:
            g = g.reshape(n, 1)
        if g.shape[0] != n:
            raise InvalidInput(f"G has {g.shape[0]} rows, expected {n}")
        q = _psd_check(np.atleast_2d(np.asarray(self.Q, dtype=float)), "Q")
        if q.shape[0] != g.shape[1]:
            raise InvalidInput(f"Q dim {q.shape[0]} != noise dim {g.shape[1]}")
        sensors = []
        for i, (h, r) in enumerate(self.sensors):
            h = np.atleast_2d(np.asarray(h, dtype=float))
            r = _psd_check(np.atleast_2d(np.asarray(r, dtype=float)), f"R_{i}")
            if h.shape[1] != n:
                raise InvalidInput(f"H_{i} has {h.shape[1]} columns, expected {n}")
            if r.shape[0] != h.shape[0]:
                raise InvalidInput(f"R_{i} dim {r.shape[0]} != measurement dim {h.shape[0]}")
            sensors.append((h, r))
        if not sensors:
            raise InvalidInput("model needs at least one sensor")
        x0 = np.asarray(self.x0hat, dtype=float).reshape(-1)
        if x0.shape[0] != n:
            raise InvalidInput(f"x0hat dim {x0.shape[0]} != {n}")
        v0 = _psd_check(np.asarray(self.V0, dtype=float), "V0")
        if v0.shape[0] != n:
            raise InvalidInput(f"V0 dim {v0.shape[0]} != {n}")
        object.__setattr__(self, "F", f)
        object.__setattr__(self, "G", g)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "sensors", tuple(sensors))
        object.__setattr__(self, "x0hat", x0)
        object.__setattr__(self, "V0", v0)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def r(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return len(self.sensors)

    @property
    def m(self) -> tuple[int, ...]:
        return tuple(h.shape[0] for h, _ in self.sensors)

    def layout(self) -> BlockLayout:
        return BlockLayout(self.n, self.m)

    def stacked_h(self) -> np.ndarray:
        return np.vstack([h for h, _ in self.sensors])

    def block_r(self) -> np.ndarray:
        m = sum(self.m)
        out = np.zeros((m, m))
        off = 0
        for _, r in self.sensors:
            k = r.shape[0]
            out[off : off + k, off : off + k] = r
            off += k
        return out

    def sensor_submodel(self, i: int) -> "StateSpaceModel":
        if not 0 <= i < self.p:
            raise InvalidInput(f"sensor index {i} out of range")
        return StateSpaceModel(
            F=self.F, G=self.G, Q=self.Q,
            sensors=(self.sensors[i],),
            x0hat=self.x0hat, V0=self.V0,
        )

    def initial_state(self) -> "FilterState":
        return FilterState(xhat=self.x0hat.copy(), V=self.V0.copy(), t=0)


@dataclass(frozen=True)
class FilterState:
    """Posterior mean and covariance carried between recursion steps.

    joint_cov optionally carries the least-favorable joint second moment of
    the robust update that produced this state; the next robust step uses it
    to warm start its solver.
    """

    xhat: np.ndarray
    V: np.ndarray
    t: int
    joint_cov: np.ndarray | None = None

    def __post_init__(self):
        xhat = np.asarray(self.xhat, dtype=float).reshape(-1)
        v = np.asarray(self.V, dtype=float)
        if v.shape != (xhat.shape[0], xhat.shape[0]):
            raise InvalidInput(f"V shape {v.shape} does not match state dim {xhat.shape[0]}")
        if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(v))):
            raise InvalidInput("filter state has non-finite entries")
        if min_eigenvalue(v) < -1e-9 * (1.0 + spectral_norm(v)):
            raise InvalidInput("posterior covariance is not PSD")
        object.__setattr__(self, "xhat", xhat)
        object.__setattr__(self, "V", v)


def predicted_state_cov(model: StateSpaceModel, v_prev: np.ndarray) -> np.ndarray:
    """One-step prior covariance F V F^T + G Q G^T."""
    return symmetrize(model.F @ v_prev @ model.F.T + model.G @ model.Q @ model.G.T)


def predict_sensor(model: StateSpaceModel, prev: FilterState, i: int) -> GaussianMoments:
    """Predicted joint Gaussian of (x_t, y^i_t) given the previous posterior.

    Mean is [F xhat; H_i F xhat]; covariance has blocks
    Sigma_xx = F V F^T + G Q G^T, Sigma_xy = Sigma_xx H_i^T,
    Sigma_yy = H_i Sigma_xx H_i^T + R_i.
    """
    if not 0 <= i < model.p:
        raise InvalidInput(f"sensor index {i} out of range")
    if prev.xhat.shape[0] != model.n:
        raise InvalidInput(
            f"filter state dim {prev.xhat.shape[0]} does not match model dim {model.n}"
        )
    h, r = model.sensors[i]
    n, mi = model.n, h.shape[0]
    xbar = model.F @ prev.xhat
    p_pred = predicted_state_cov(model, prev.V)
    mean = np.concatenate([xbar, h @ xbar])
    cov = np.empty((n + mi, n + mi))
    cov[:n, :n] = p_pred
    cov[:n, n:] = p_pred @ h.T
    cov[n:, :n] = cov[:n, n:].T
    cov[n:, n:] = h @ p_pred @ h.T + r
    return GaussianMoments(mean=mean, cov=symmetrize(cov))


def _normalize_gammas(gammas, p: int) -> list[tuple[float, float, float]]:
    """Accept one (g1, g2[, g3]) tuple shared by all sensors, or one per sensor."""
    seq = list(gammas)
    if seq and np.isscalar(seq[0]):
        seq = [tuple(seq)] * p
    if len(seq) != p:
        raise InvalidInput(f"need gammas for {p} sensors, got {len(seq)}")
    out = []
    for g in seq:
        g = tuple(float(v) for v in g)
        if len(g) == 2:
            g = g + (0.0,)
        if len(g) != 3:
            raise InvalidInput(f"gamma tuple must be (g1, g2) or (g1, g2, g3), got {g}")
        out.append(g)
    return out


def _rescaled_warm_start(
    prev_s: np.ndarray, layout: BlockLayout, s_nom: np.ndarray
) -> np.ndarray | None:
    """Carry the previous optimum's cross-sensor correlation into a new step.

    The pinned per-sensor blocks change scale between steps (the posterior
    covariance can shrink by orders of magnitude early on), so reusing the
    previous least-favorable moment verbatim starts the projection far from
    the new feasible set. Instead, whiten its cross-sensor blocks by the old
    diagonal y-blocks, rescale by the new ones, and splice them into the new
    nominal assembly. Returns None when the old blocks are too degenerate to
    whiten.
    """
    s = s_nom.copy()
    isqrt_prev = []
    sqrt_new = []
    for i in range(layout.p):
        off, mi = layout.y_offset(i), layout.m[i]
        blk_prev = prev_s[off : off + mi, off : off + mi]
        try:
            _, isq = pd_sqrt_pair(blk_prev, eps_pd=1e-12 * (1.0 + abs(blk_prev).max()))
        except EstimationError:
            return None
        isqrt_prev.append(isq)
        sqrt_new.append(psd_sqrt(s_nom[off : off + mi, off : off + mi]))
    for i in range(layout.p):
        oi, mi = layout.y_offset(i), layout.m[i]
        for j in range(i + 1, layout.p):
            oj, mj = layout.y_offset(j), layout.m[j]
            w = isqrt_prev[i] @ prev_s[oi : oi + mi, oj : oj + mj] @ isqrt_prev[j]
            cross = sqrt_new[i] @ w @ sqrt_new[j]
            s[oi : oi + mi, oj : oj + mj] = cross
            s[oj : oj + mj, oi : oi + mi] = cross.T
    return symmetrize(s)


def robust_step_estimator(
    model: StateSpaceModel,
    prev: FilterState,
    gammas,
    cfg: SolverConfig | None = None,
):
    """Minimax estimator for one step's predicted uncertainty set.

    Builds the per-sensor predicted joint Gaussians, wraps them with the
    given band multipliers, and solves the static problem, warm starting from
    the previous step's least-favorable moment when ``prev`` carries one. The
    gain and posterior covariance depend only on ``prev.V``, never on the
    mean, so one estimator can serve every trajectory at this step.
    """
    layout = model.layout()
    gam = _normalize_gammas(gammas, model.p)
    moments = [predict_sensor(model, prev, i) for i in range(model.p)]
    uset = UncertaintySet(
        layout=layout,
        sensors=tuple(
            SensorConstraint(nominal=mom, gamma1=g[0], gamma2=g[1], gamma3=g[2])
            for mom, g in zip(moments, gam)
        ),
    )
    warm = None
    if prev.joint_cov is not None and prev.joint_cov.shape == (layout.dim, layout.dim):
        _, s_nom = assemble_nominal_joint(uset)
        warm = _rescaled_warm_start(prev.joint_cov, layout, s_nom)
    try:
        return solve_static_estimator(uset, cfg=cfg, s0=warm)
    except EstimationError as err:
        raise type(err)(f"robust update failed at t={prev.t + 1}: {err}") from err


def mdrkf_step(
    model: StateSpaceModel,
    prev: FilterState,
    y_t: np.ndarray,
    gammas,
    cfg: SolverConfig | None = None,
) -> FilterState:
    """One robust prediction/update cycle on the stacked measurement y_t.

    gammas is a (gamma1, gamma2[, gamma3]) tuple shared by all sensors or a
    per-sensor sequence of such tuples. Solver failures are re-raised with the
    failing time index attached.
    """
    y = np.asarray(y_t, dtype=float).reshape(-1)
    if y.shape[0] != sum(model.m):
        raise InvalidInput(f"measurement dim {y.shape[0]} != {sum(model.m)}")
    est = robust_step_estimator(model, prev, gammas, cfg)
    xhat = est.A @ y + est.b
    v_post = symmetrize(posterior_cov(est))
    return FilterState(xhat=xhat, V=v_post, t=prev.t + 1, joint_cov=est.sstar)


def kf_step(model: StateSpaceModel, prev: FilterState, y_t: np.ndarray) -> FilterState:
    """Canonical centralized Kalman step on stacked measurements.

    Uses the Joseph-form covariance update to keep V symmetric PSD under
    rounding.
    """
    y = np.asarray(y_t, dtype=float).reshape(-1)
    h = model.stacked_h()
    r = model.block_r()
    if y.shape[0] != h.shape[0]:
        raise InvalidInput(f"measurement dim {y.shape[0]} != {h.shape[0]}")
    xbar = model.F @ prev.xhat
    p_pred = predicted_state_cov(model, prev.V)
    s_in = symmetrize(h @ p_pred @ h.T + r)
    if min_eigenvalue(s_in) <= 1e-12 * (1.0 + spectral_norm(s_in)):
        raise SingularBlock(f"innovation covariance singular at t={prev.t + 1}")
    k = np.linalg.solve(s_in, h @ p_pred).T
    xhat = xbar + k @ (y - h @ xbar)
    i_kh = np.eye(model.n) - k @ h
    v_post = symmetrize(i_kh @ p_pred @ i_kh.T + k @ r @ k.T)
    return FilterState(xhat=xhat, V=v_post, t=prev.t + 1)


def local_kf_step(
    model: StateSpaceModel, i: int, prev_i: FilterState, y_i: np.ndarray
) -> FilterState:
    """Kalman step restricted to sensor i's measurement."""
    return kf_step(model.sensor_submodel(i), prev_i, y_i)


def _information(v: np.ndarray, name: str) -> np.ndarray:
    if min_eigenvalue(v) <= 1e-12 * (1.0 + spectral_norm(v)):
        raise SingularBlock(f"{name} is singular; cannot fuse")
    return np.linalg.inv(symmetrize(v))


def _ci_trace_batch(weights: np.ndarray, infos: np.ndarray) -> np.ndarray:
    """Tr of the fused covariance for each weight row; infos is (p, n, n)."""
    j = np.einsum("wk,kij->wij", weights, infos)
    return np.trace(np.linalg.inv(j), axis1=1, axis2=2)


def _simplex_grid(p: int, step: float) -> np.ndarray:
    ticks = np.arange(0.0, 1.0 + 0.5 * step, step)
    if p == 2:
        w = ticks.reshape(-1, 1)
        return np.hstack([w, 1.0 - w])
    rows = []
    for a in ticks:
        for b in np.arange(0.0, 1.0 - a + 0.5 * step, step):
            rows.append((a, b, 1.0 - a - b))
    return np.asarray(rows)


def _ci_weights(infos: np.ndarray, resolution: float, coarse: float) -> np.ndarray:
    """Trace-minimizing simplex weights: grid search plus one coordinate pass.

    Tr((sum_i w_i V_i^{-1})^{-1}) is convex in w, so a coarse grid followed by
    one pairwise line-search pass at the fine resolution lands within grid
    accuracy of the optimum. For p = 2 the initial grid is already at the fine
    resolution.
    """
    p = infos.shape[0]
    grid = _simplex_grid(p, resolution if p == 2 else coarse)
    traces = _ci_trace_batch(grid, infos)
    best = grid[int(np.argmin(traces))].copy()
    for a in range(p):
        for b in range(a + 1, p):
            mass = best[a] + best[b]
            if mass <= 0.0:
                continue
            wa = np.arange(0.0, mass + 0.5 * resolution, resolution)
            wa = np.minimum(wa, mass)
            cand = np.tile(best, (wa.size, 1))
            cand[:, a] = wa
            cand[:, b] = mass - wa
            tr = _ci_trace_batch(cand, infos)
            best = cand[int(np.argmin(tr))].copy()
    return best


def ci_fuse(
    estimates: list[tuple[np.ndarray, np.ndarray]],
    resolution: float = 1e-3,
    coarse_resolution: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    """Covariance-intersection fusion of local estimates with unknown cross-correlations.

    V^{-1} = sum_i w_i V_i^{-1} and xhat = V sum_i w_i V_i^{-1} xhat_i, with
    the simplex weights chosen to minimize Tr(V). Supports two or three
    inputs (the weight search grids the simplex).
    """
    if len(estimates) < 2:
        raise InvalidInput("covariance intersection needs at least two estimates")
    if len(estimates) > 3:
        raise InvalidInput("weight search supports at most three estimates")
    xs = [np.asarray(x, dtype=float).reshape(-1) for x, _ in estimates]
    infos = np.stack([_information(v, f"V_{i}") for i, (_, v) in enumerate(estimates)])
    w = _ci_weights(infos, resolution, coarse_resolution)
    return _ci_combine(xs, infos, w)


def _ci_combine(
    xs: list[np.ndarray], infos: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    j = np.einsum("k,kij->ij", w, infos)
    v = symmetrize(np.linalg.inv(j))
    rhs = sum(wi * (pi @ xi) for wi, pi, xi in zip(w, infos, xs))
    return np.linalg.solve(j, rhs), v
