"""Moment-constrained marginal uncertainty sets.

A set is described per sensor by a nominal Gaussian for the joint vector
(x, y^i) together with band multipliers (gamma1, gamma2) bounding the joint
second moment in the Loewner order, plus a mean-ellipsoid radius gamma3. The
estimator pins the mean at the nominal value, so gamma3 is stored and
validated but never drives a projection.

Feasibility of a candidate joint second moment S means: for every sensor i,
gamma1 * Sigma_i <= S_i <= gamma2 * Sigma_i (S_i the principal submatrix on
the (x, y^i) rows), and S >= 0 globally. Cross-sensor blocks are constrained
only through the global PSD condition; they are exactly the unknown
correlations the filter is robust against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ProjectionNotConverged, SingularBlock
from .linalg import (
    BlockLayout,
    min_eigenvalue,
    pd_sqrt_pair,
    psd_project,
    spectral_norm,
    symmetrize,
)

#: Default Dykstra parameters.
DEFAULT_PROJECTION_TOL = 1e-8
DEFAULT_PROJECTION_MAX_ITER = 500


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianMoments:
    """Mean vector and symmetric PSD covariance of a Gaussian."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise InvalidInput(f"covariance must be square, got shape {cov.shape}")
        if mean.shape[0] != cov.shape[0]:
            raise InvalidInput(
                f"mean dim {mean.shape[0]} != covariance dim {cov.shape[0]}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidInput("moments contain non-finite entries")
        cov = symmetrize(cov)
        lam_min = min_eigenvalue(cov)
        if lam_min < -1e-10 * (1.0 + spectral_norm(cov)):
            raise InvalidInput(f"covariance not PSD: min eigenvalue {lam_min:.3e}")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SensorConstraint:
    """Nominal joint (x, y^i) moments plus the band/ellipsoid multipliers.

    Construction only checks finiteness; ordering conditions such as
    gamma1 <= gamma2 are reported by :func:`validate` so that misconfigured
    sets can be diagnosed rather than rejected mid-build.
    """

    nominal: GaussianMoments
    gamma1: float
    gamma2: float
    gamma3: float = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidInput(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class UncertaintySet:
    """Per-sensor moment constraints over the joint vector z = [x; y^1..y^p]."""

    layout: BlockLayout
    sensors: tuple[SensorConstraint, ...]

    def __post_init__(self):
        sensors = tuple(self.sensors)
        if len(sensors) != self.layout.p:
            raise InvalidInput(
                f"{len(sensors)} sensor constraints for layout with p={self.layout.p}"
            )
        for i, sc in enumerate(sensors):
            want = self.layout.n + self.layout.m[i]
            if sc.nominal.dim != want:
                raise InvalidInput(
                    f"sensor {i} nominal dim {sc.nominal.dim} != n+m_i = {want}"
                )
        object.__setattr__(self, "sensors", sensors)

    @property
    def p(self) -> int:
        return self.layout.p


def validate(uset: UncertaintySet) -> list[str]:
    """Check structural and feasibility conditions; return violations.

    An empty list means the set is well formed and the nominal assembly is
    guaranteed feasible (gamma1 <= 1 <= gamma2 for every sensor). Diagnostics
    are returned, never raised.
    """
    n = uset.layout.n
    problems: list[str] = []
    for i, sc in enumerate(uset.sensors):
        if sc.gamma1 < 0:
            problems.append(f"sensor {i}: gamma1 < 0")
        if sc.gamma3 < 0:
            problems.append(f"sensor {i}: gamma3 < 0")
        if sc.gamma1 > sc.gamma2:
            problems.append(f"sensor {i}: gamma1 > gamma2")
        if not (sc.gamma1 <= 1.0 <= sc.gamma2):
            problems.append(
                f"sensor {i}: band excludes the nominal (need gamma1 <= 1 <= gamma2)"
            )
        if min_eigenvalue(sc.nominal.cov) <= 0.0:
            problems.append(f"sensor {i}: nominal covariance not positive definite")

    ref = uset.sensors[0].nominal
    ref_mean_x = ref.mean[:n]
    ref_cov_xx = ref.cov[:n, :n]
    scale = 1.0 + spectral_norm(ref_cov_xx)
    for i, sc in enumerate(uset.sensors[1:], start=1):
        if not np.allclose(sc.nominal.mean[:n], ref_mean_x, atol=1e-10 * scale, rtol=0):
            problems.append(f"sensor {i}: inconsistent x marginal mean")
        if not np.allclose(sc.nominal.cov[:n, :n], ref_cov_xx, atol=1e-10 * scale, rtol=0):
            problems.append(f"sensor {i}: inconsistent x marginal covariance")
    return problems


class _SensorContext:
    """Cached per-sensor factors used by projections and residuals."""

    __slots__ = ("idx", "sigma", "sqrt", "inv_sqrt", "norm", "g1", "g2", "lo", "hi")

    def __init__(self, uset: UncertaintySet, i: int):
        sc = uset.sensors[i]
        idx = uset.layout.sensor_indices(i)
        self.idx = np.ix_(idx, idx)
        self.sigma = np.asarray(sc.nominal.cov)
        self.sqrt, self.inv_sqrt = pd_sqrt_pair(self.sigma)
        self.norm = spectral_norm(self.sigma)
        self.g1 = sc.gamma1
        self.g2 = sc.gamma2
        self.lo = self.g1 * self.sigma
        self.hi = self.g2 * self.sigma


def _prepare(uset: UncertaintySet) -> list[_SensorContext]:
    return [_SensorContext(uset, i) for i in range(uset.p)]


def feasibility_residual(
    s: np.ndarray,
    uset: UncertaintySet,
    normalized: bool = True,
    _ctx: list[_SensorContext] | None = None,
) -> float:
    """Worst violation of the set's constraints by candidate S (0 = feasible).

    For each sensor the violation is the most negative eigenvalue of
    (gamma2*Sigma_i - S_i) and of (S_i - gamma1*Sigma_i); globally it is the
    most negative eigenvalue of S. When ``normalized`` each sensor term is
    divided by ||Sigma_i||_2 and the global term by max_i ||Sigma_i||_2.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (uset.layout.dim, uset.layout.dim):
        raise InvalidInput(f"candidate shape {s.shape} != layout dim {uset.layout.dim}")
    ctx = _ctx if _ctx is not None else _prepare(uset)
    worst = 0.0
    for c in ctx:
        block = s[c.idx]
        upper = -min_eigenvalue(c.g2 * c.sigma - block)
        lower = -min_eigenvalue(block - c.g1 * c.sigma)
        v = max(upper, lower, 0.0)
        if normalized:
            v /= c.norm
        worst = max(worst, v)
    g = max(-min_eigenvalue(s), 0.0)
    if normalized:
        g /= max(c.norm for c in ctx)
    return max(worst, g)


def project_band(
    x: np.ndarray, sigma: np.ndarray, gamma1: float, gamma2: float
) -> np.ndarray:
    """Clamp X into the Loewner band [gamma1*Sigma, gamma2*Sigma].

    Whitens by Sigma^{-1/2}, clips the whitened eigenvalues into
    [gamma1, gamma2], and unwhitens. This is the exact metric projection in
    the Sigma-weighted norm (not the Euclidean one); inputs already inside the
    band are returned unchanged.
    """
    if gamma1 > gamma2:
        raise InvalidInput(f"gamma1={gamma1} > gamma2={gamma2}")
    sqrt, inv_sqrt = pd_sqrt_pair(sigma)
    return _project_band_prepared(symmetrize(x), sqrt, inv_sqrt, gamma1, gamma2)


def _project_band_prepared(
    x: np.ndarray, sqrt: np.ndarray, inv_sqrt: np.ndarray, g1: float, g2: float
) -> np.ndarray:
    w = symmetrize(inv_sqrt @ x @ inv_sqrt)
    vals, vecs = np.linalg.eigh(w)
    if vals[0] >= g1 and vals[-1] <= g2:
        return x
    clipped = np.clip(vals, g1, g2)
    return symmetrize(sqrt @ ((vecs * clipped) @ vecs.T) @ sqrt)


def _project_band_euclidean(
    x: np.ndarray, lo: np.ndarray, hi: np.ndarray, inner: int = 60
) -> np.ndarray:
    """Frobenius-metric projection onto {lo <= X <= hi} (Loewner order).

    Dykstra between the two shifted cones {X >= lo} and {X <= hi}, each of
    which has a closed-form Euclidean projection. Slower than the whitened
    clamp but keeps every operator a projection in one common metric, which
    removes the spurious fixed points the mixed-metric cycle can fall into.
    Inputs already inside the band return unchanged.
    """
    gap = hi - lo
    if np.abs(gap).max() <= 1e-14 * (1.0 + np.abs(hi).max()):
        return 0.5 * (lo + hi)
    z = symmetrize(x)
    scale = 1.0 + float(np.abs(hi).max())
    if (
        min_eigenvalue(z - lo) >= -1e-13 * scale
        and min_eigenvalue(hi - z) >= -1e-13 * scale
    ):
        return z
    p = np.zeros_like(z)
    q = np.zeros_like(z)
    for _ in range(inner):
        y = lo + psd_project(z + p - lo)
        p = z + p - y
        z_new = hi - psd_project(hi - (y + q))
        q = y + q - z_new
        if np.abs(z_new - z).max() <= 1e-12 * (1.0 + np.abs(z).max()):
            return z_new
        z = z_new
    return z


def project_feasible(
    s: np.ndarray,
    uset: UncertaintySet,
    max_iter: int = DEFAULT_PROJECTION_MAX_ITER,
    tol: float = DEFAULT_PROJECTION_TOL,
    _ctx: list[_SensorContext] | None = None,
    trace: list[float] | None = None,
) -> tuple[np.ndarray, float]:
    """Cyclic alternating projections onto the uncertainty set.

    Each cycle applies the per-sensor band projections (each touching only
    its sensor's principal submatrix) followed by the global PSD projection,
    until ``feasibility_residual(S) <= tol``. Plain cyclic projections are
    used rather than Dykstra's corrected variant: the correction terms turn
    pathologically slow where the cone and the band faces meet tangentially
    (hundreds of cycles versus a handful), and nothing downstream needs the
    nearest feasible point, only *a* feasible one certified by the residual.

    The cheap whitened band clamp is not a Euclidean projection, and on rare
    inputs the mixed-metric cycle settles at a spurious balance point with a
    nonzero residual. When the residual stalls above tol, the cycle switches
    the band step to the true Euclidean band projection, restoring the
    single-metric convergence guarantee at a higher per-cycle cost.

    Returns the iterate and its achieved residual; already-feasible inputs
    come back unchanged, and the returned iterate is exactly PSD because the
    PSD projection closes every cycle. Raises ProjectionNotConverged
    (carrying the best residual seen) after ``max_iter`` cycles.
    """
    ctx = _ctx if _ctx is not None else _prepare(uset)
    x = symmetrize(np.asarray(s, dtype=float))
    r = feasibility_residual(x, uset, _ctx=ctx)
    if trace is not None:
        trace.append(r)
    if r <= tol:
        return x, r

    best = r
    euclidean = False
    stall_ref = r
    for cycle in range(max_iter):
        for c in ctx:
            block = symmetrize(x[c.idx])
            if euclidean:
                x[c.idx] = _project_band_euclidean(block, c.lo, c.hi)
            else:
                x[c.idx] = _project_band_prepared(block, c.sqrt, c.inv_sqrt, c.g1, c.g2)
        x = psd_project(x)
        r = feasibility_residual(x, uset, _ctx=ctx)
        best = min(best, r)
        if trace is not None:
            trace.append(r)
        if r <= tol:
            return x, r
        if not euclidean and (cycle + 1) % 10 == 0:
            if r > 0.5 * stall_ref:
                euclidean = True
            stall_ref = r
    raise ProjectionNotConverged(
        f"feasibility residual {best:.3e} > tol {tol:.0e} after {max_iter} cycles",
        residual=best,
    )


def random_feasible_second_moment(
    uset: UncertaintySet,
    around: np.ndarray,
    rng: np.random.Generator,
    scale: float = 0.1,
    max_iter: int = DEFAULT_PROJECTION_MAX_ITER,
    tol: float = DEFAULT_PROJECTION_TOL,
) -> np.ndarray:
    """Feasible second moment near ``around``: symmetric Gaussian perturbation
    of relative Frobenius size ``scale``, pushed back into the set.

    Used to probe the saddle inequality close to the boundary where it binds.
    Perturbations the cyclic projection cannot settle within its budget are
    retried at half the scale (same noise direction) before giving up.
    """
    noise = symmetrize(rng.standard_normal(around.shape))
    nf = float(np.linalg.norm(noise))
    if nf > 0:
        noise *= scale * float(np.linalg.norm(around)) / nf
    last: ProjectionNotConverged | None = None
    for _ in range(4):
        try:
            s, _ = project_feasible(around + noise, uset, max_iter=max_iter, tol=tol)
            return s
        except ProjectionNotConverged as err:
            last = err
            noise *= 0.5
    raise last


def _project_feasible_exact(
    s: np.ndarray,
    uset: UncertaintySet,
    max_iter: int = DEFAULT_PROJECTION_MAX_ITER,
    tol: float = DEFAULT_PROJECTION_TOL,
    _ctx: list[_SensorContext] | None = None,
) -> tuple[np.ndarray, float]:
    """Dykstra projection with every operator Euclidean (nearest feasible point).

    The per-sensor band steps run the inner two-cone Euclidean projection, so
    all operators are metric projections in one norm and the classic Dykstra
    guarantees apply: the iterates converge to the Euclidean projection onto
    the intersection. Several times costlier per cycle than the fast variant;
    the worst-case solver uses it as a polish phase where ascent quality
    depends on the projection being the true nearest point.
    """
    ctx = _ctx if _ctx is not None else _prepare(uset)
    x = symmetrize(np.asarray(s, dtype=float))
    r = feasibility_residual(x, uset, _ctx=ctx)
    if r <= tol:
        return x, r
    d = x.shape[0]
    incs = [np.zeros((d, d)) for _ in range(len(ctx) + 1)]
    best = r
    for _ in range(max_iter):
        for i, c in enumerate(ctx):
            y = x + incs[i]
            block = _project_band_euclidean(symmetrize(y[c.idx]), c.lo, c.hi)
            x = y.copy()
            x[c.idx] = block
            incs[i] = y - x
        y = x + incs[-1]
        x = psd_project(y)
        incs[-1] = y - x
        r = feasibility_residual(x, uset, _ctx=ctx)
        best = min(best, r)
        if r <= tol:
            return x, r
    raise ProjectionNotConverged(
        f"exact projection residual {best:.3e} > tol {tol:.0e} after {max_iter} cycles",
        residual=best,
    )


def assemble_nominal_joint(uset: UncertaintySet) -> tuple[np.ndarray, np.ndarray]:
    """Joint nominal moments (mu, S0) implied by the per-sensor marginals.

    The shared x moments come from the sensors (which must agree); each
    cross-sensor block is completed as Sigma_{y^i,x} Sigma_xx^{-1}
    Sigma_{x,y^j}, the value implied by sensor noises that are conditionally
    independent given x. The completion is always PSD, so the assembly is a
    feasible starting point whenever gamma1 <= 1 <= gamma2.
    """
    layout = uset.layout
    n, d = layout.n, layout.dim
    base = uset.sensors[0].nominal
    cov_xx = base.cov[:n, :n]
    if min_eigenvalue(cov_xx) <= 0.0:
        raise SingularBlock("shared x covariance block is singular")

    mu = np.zeros(d)
    mu[:n] = base.mean[:n]
    s0 = np.zeros((d, d))
    s0[:n, :n] = cov_xx

    # B_i = Sigma_{y^i,x} Sigma_xx^{-1}, the regression of y^i on x.
    regs = []
    for i, sc in enumerate(uset.sensors):
        off = layout.y_offset(i)
        mi = layout.m[i]
        cov = sc.nominal.cov
        mu[off : off + mi] = sc.nominal.mean[n:]
        s0[:n, off : off + mi] = cov[:n, n:]
        s0[off : off + mi, :n] = cov[n:, :n]
        s0[off : off + mi, off : off + mi] = cov[n:, n:]
        regs.append(np.linalg.solve(cov_xx, cov[:n, n:]).T)

    for i in range(layout.p):
        oi, mi = layout.y_offset(i), layout.m[i]
        for j in range(i + 1, layout.p):
            oj, mj = layout.y_offset(j), layout.m[j]
            cross = regs[i] @ s0[:n, oj : oj + mj]
            s0[oi : oi + mi, oj : oj + mj] = cross
            s0[oj : oj + mj, oi : oi + mi] = cross.T
    return mu, symmetrize(s0)
