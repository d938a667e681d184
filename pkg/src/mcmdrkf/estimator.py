"""Static minimax estimator.

Solves the worst-case second-moment problem over a marginal uncertainty set
and returns the optimal affine rule psi(y) = A y + b together with the
least-favorable Gaussian (mu, S*). The rule is the Bayes posterior-mean map
under that Gaussian: A = S*_xy (S*_yy)^{-1}, b = mu_x - A mu_y, and the
worst-case MSE equals Tr(S*_xx - S*_xy (S*_yy)^{-1} S*_yx).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .linalg import BlockLayout, symmetrize
from .solver import SolverConfig, SolverReport, solve_worst_case
from .uncertainty import GaussianMoments, UncertaintySet, assemble_nominal_joint, validate


def _psd_solve_right(syy: np.ndarray, sxy: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """S_xy @ pinv(S_yy) through an eigenvalue cutoff.

    Equivalent to the plain inverse for well-conditioned blocks but exact in
    the limit on the PSD boundary, where the least-favorable S_yy can be
    singular while S_xy stays in its range.
    """
    vals, vecs = np.linalg.eigh(symmetrize(syy))
    cut = rcond * max(vals[-1], 1e-300)
    inv_vals = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    return (sxy @ vecs) * inv_vals @ vecs.T


@dataclass(frozen=True)
class AffineEstimator:
    """Affine rule y -> A y + b with its worst-case certificate.

    Attributes:
        A: Gain matrix, shape (n, m).
        b: Intercept, shape (n,).
        worst_case_mse: Optimal value of the worst-case MSE problem.
        mu: Joint mean the rule was built around, shape (n + m,).
        layout: Block structure of the joint vector.
        sstar: Least-favorable joint second moment (None after JSON round-trip).
        report: Solver diagnostics (None after JSON round-trip).
    """

    A: np.ndarray
    b: np.ndarray
    worst_case_mse: float
    mu: np.ndarray
    layout: BlockLayout
    sstar: np.ndarray | None = None
    report: SolverReport | None = None

    def __post_init__(self):
        n, m = self.layout.n, self.layout.m_total
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if a.shape != (n, m):
            raise InvalidInput(f"gain shape {a.shape} != ({n}, {m})")
        if b.shape[0] != n or mu.shape[0] != n + m:
            raise InvalidInput("intercept or mean dimension mismatch")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "mu", mu)

    def to_dict(self) -> dict:
        return {
            "n": self.layout.n,
            "m": list(self.layout.m),
            "mu": self.mu.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "worst_case_mse": self.worst_case_mse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineEstimator":
        layout = BlockLayout(int(d["n"]), tuple(int(v) for v in d["m"]))
        return cls(
            A=np.asarray(d["A"], dtype=float),
            b=np.asarray(d["b"], dtype=float),
            worst_case_mse=float(d["worst_case_mse"]),
            mu=np.asarray(d["mu"], dtype=float),
            layout=layout,
        )


def solve_static_estimator(
    uset: UncertaintySet,
    cfg: SolverConfig | None = None,
    s0: np.ndarray | None = None,
) -> AffineEstimator:
    """Build the minimax-optimal affine estimator for an uncertainty set.

    The solver starts from ``s0`` when given (a warm start from a neighbouring
    problem), otherwise from the nominal joint assembly.
    """
    problems = validate(uset)
    if problems:
        raise InvalidInput("uncertainty set invalid: " + "; ".join(problems))
    mu, _ = assemble_nominal_joint(uset)
    sstar, report = solve_worst_case(uset, s0=s0, cfg=cfg)
    n = uset.layout.n
    a = _psd_solve_right(sstar[n:, n:], sstar[:n, n:])
    wc = float(np.trace(sstar[:n, :n]) - np.sum(a * sstar[:n, n:]))
    b = mu[:n] - a @ mu[n:]
    return AffineEstimator(
        A=a,
        b=b,
        worst_case_mse=wc,
        mu=mu,
        layout=uset.layout,
        sstar=sstar,
        report=report,
    )


def estimate(est: AffineEstimator, y: np.ndarray) -> np.ndarray:
    """Apply the affine rule to a stacked measurement vector."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != est.layout.m_total:
        raise InvalidInput(f"measurement dim {y.shape[0]} != {est.layout.m_total}")
    return est.A @ y + est.b


def posterior_cov(est: AffineEstimator) -> np.ndarray:
    """Error covariance of the rule under its least-favorable Gaussian."""
    if est.sstar is None:
        raise InvalidInput("estimator carries no joint second moment")
    n = est.layout.n
    return symmetrize(est.sstar[:n, :n] - est.A @ est.sstar[n:, :n])


def evaluate_mse(est: AffineEstimator, q: GaussianMoments) -> float:
    """Closed-form MSE of the rule under a Gaussian law for the joint vector.

    For q with mean c and covariance S this is
    Tr(S_xx - A S_yx - S_xy A^T + A S_yy A^T) + ||c_x - A c_y - b||^2.
    """
    if q.dim != est.layout.dim:
        raise InvalidInput(f"distribution dim {q.dim} != joint dim {est.layout.dim}")
    n = est.layout.n
    s = q.cov
    a = est.A
    val = float(np.trace(s[:n, :n]) - 2.0 * np.sum(a * s[:n, n:]) + np.sum((a @ s[n:, n:]) * a))
    bias = q.mean[:n] - a @ q.mean[n:] - est.b
    return val + float(bias @ bias)
