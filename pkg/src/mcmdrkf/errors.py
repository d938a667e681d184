"""Exception types shared across the package."""


class EstimationError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(EstimationError):
    """Malformed argument: wrong dimension, non-finite entries, bad index."""


class SingularBlock(EstimationError):
    """A matrix block that must be positive definite is singular to tolerance."""


class ProjectionNotConverged(EstimationError):
    """Alternating projections did not reach the requested feasibility residual.

    Attributes:
        residual: Best feasibility residual achieved before giving up.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class OracleUnsupported(EstimationError):
    """Brute-force oracle asked to handle an instance outside its tiny scope."""


class NonFiniteObjective(EstimationError):
    """Solver iterate produced a NaN or infinite objective value."""
