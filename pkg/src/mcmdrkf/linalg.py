"""Dense symmetric-matrix utilities: eigendecompositions, PSD projections,
Schur-complement traces, and block bookkeeping for joint state/measurement
matrices.

All matrices are plain ``numpy.ndarray`` values kept exactly symmetric by
construction; problem sizes are small (tens of rows), so everything is dense
and O(d^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, SingularBlock

# Positive-definiteness floor used when inverting measurement blocks.
EPS_PD = 1e-9


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return 0.5 * (A + A^T) as a new array."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _check_square_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput(f"{name} has non-finite entries")
    return m


def sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues sorted descending, orthonormal eigenvectors as
    columns) so that ``m == vecs @ diag(vals) @ vecs.T`` up to
    1e-10 * (1 + ||m||_F).
    """
    m = _check_square_finite(m, "sym_eig input")
    vals, vecs = np.linalg.eigh(symmetrize(m))
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def psd_project(m: np.ndarray) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix.

    Eigenvalues are clipped at zero; PSD inputs are returned unchanged (after
    symmetrization), which makes the operation an exact fixed point there.
    """
    m = symmetrize(_check_square_finite(m, "psd_project input"))
    vals, vecs = np.linalg.eigh(m)
    if vals[0] >= 0.0:
        return m
    clipped = np.maximum(vals, 0.0)
    return symmetrize((vecs * clipped) @ vecs.T)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative rounding noise clipped)."""
    m = symmetrize(_check_square_finite(m, "psd_sqrt input"))
    vals, vecs = np.linalg.eigh(m)
    root = np.sqrt(np.maximum(vals, 0.0))
    return symmetrize((vecs * root) @ vecs.T)


def pd_sqrt_pair(m: np.ndarray, eps_pd: float = EPS_PD) -> tuple[np.ndarray, np.ndarray]:
    """(M^{1/2}, M^{-1/2}) for a positive definite matrix.

    Raises SingularBlock if the smallest eigenvalue is at or below ``eps_pd``.
    """
    m = symmetrize(_check_square_finite(m, "pd_sqrt_pair input"))
    vals, vecs = np.linalg.eigh(m)
    if vals[0] <= eps_pd:
        raise SingularBlock(
            f"matrix not positive definite: min eigenvalue {vals[0]:.3e} <= {eps_pd:.0e}"
        )
    root = np.sqrt(vals)
    sqrt = symmetrize((vecs * root) @ vecs.T)
    inv_sqrt = symmetrize((vecs / root) @ vecs.T)
    return sqrt, inv_sqrt


def spectral_norm(m: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    vals = np.linalg.eigvalsh(symmetrize(np.asarray(m, dtype=float)))
    return float(max(abs(vals[0]), abs(vals[-1])))


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(m, dtype=float)))[0])


@dataclass(frozen=True)
class BlockLayout:
    """Index bookkeeping for the joint vector z = [x; y^1; ...; y^p].

    Attributes:
        n: State dimension.
        m: Per-sensor measurement dimensions (m_1, ..., m_p).
    """

    n: int
    m: tuple[int, ...]
    _offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput(f"state dimension must be >= 1, got {self.n}")
        m = tuple(int(v) for v in self.m)
        if len(m) < 1 or any(v < 1 for v in m):
            raise InvalidInput(f"need at least one sensor with positive dim, got {m}")
        object.__setattr__(self, "m", m)
        offs = [self.n]
        for v in m[:-1]:
            offs.append(offs[-1] + v)
        object.__setattr__(self, "_offsets", tuple(offs))

    @property
    def p(self) -> int:
        return len(self.m)

    @property
    def m_total(self) -> int:
        return sum(self.m)

    @property
    def dim(self) -> int:
        return self.n + self.m_total

    def y_offset(self, i: int) -> int:
        """Start of sensor i's measurement inside z (0-based sensor index)."""
        if not 0 <= i < self.p:
            raise InvalidInput(f"sensor index {i} out of range [0, {self.p})")
        return self._offsets[i]

    def sensor_indices(self, i: int) -> np.ndarray:
        """Joint indices of (x, y^i): the first n rows plus sensor i's rows."""
        off = self.y_offset(i)
        return np.concatenate([np.arange(self.n), np.arange(off, off + self.m[i])])


def extract_sensor_block(s: np.ndarray, layout: BlockLayout, i: int) -> np.ndarray:
    """Principal submatrix of S on the (x, y^i) index set; shape (n+m_i, n+m_i)."""
    s = _check_square_finite(s, "extract_sensor_block input")
    if s.shape[0] != layout.dim:
        raise InvalidInput(f"matrix dim {s.shape[0]} != layout dim {layout.dim}")
    idx = layout.sensor_indices(i)
    return s[np.ix_(idx, idx)].copy()


def insert_sensor_block(
    s: np.ndarray, layout: BlockLayout, i: int, block: np.ndarray
) -> np.ndarray:
    """Copy of S with the (x, y^i) principal submatrix replaced by ``block``.

    Entries outside that index set are left untouched.
    """
    s = _check_square_finite(s, "insert_sensor_block input").copy()
    block = np.asarray(block, dtype=float)
    idx = layout.sensor_indices(i)
    if block.shape != (idx.size, idx.size):
        raise InvalidInput(
            f"block shape {block.shape} does not match sensor {i} size {idx.size}"
        )
    s[np.ix_(idx, idx)] = block
    return s


def schur_trace(s: np.ndarray, n: int, eps_pd: float = EPS_PD) -> float:
    """Tr(S_xx - S_xy S_yy^{-1} S_yx) for a joint second moment split at row n.

    This is the Bayes-optimal mean squared error of estimating the first n
    coordinates from the rest under a Gaussian with covariance S. Requires the
    measurement block S_yy to be positive definite (min eigenvalue > eps_pd);
    otherwise raises SingularBlock.
    """
    s = _check_square_finite(s, "schur_trace input")
    d = s.shape[0]
    if not 1 <= n < d:
        raise InvalidInput(f"split index n={n} out of range for dim {d}")
    syy = symmetrize(s[n:, n:])
    if min_eigenvalue(syy) <= eps_pd:
        raise SingularBlock(
            f"S_yy singular to tolerance {eps_pd:.0e}; cannot form Schur complement"
        )
    sxy = s[:n, n:]
    sol = np.linalg.solve(syy, sxy.T)
    return float(np.trace(s[:n, :n]) - np.sum(sxy * sol.T))
