"""Exception types shared across the package."""


class GptrackError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(GptrackError):
    """Invalid user input: bad parameters, malformed configs, bound violations."""


class NumericError(GptrackError):
    """Numeric failure: non-finite values, failed factorizations, divergence."""


class DegenerateInputError(ValidationError):
    """Geometric input that cannot be fitted (e.g. coincident waypoints)."""


class SingularGeometryError(NumericError):
    """Curvilinear frame singularity: 1 - kappa(s) * e_s ~ 0."""


class ProjectionLostError(NumericError):
    """Pose-to-path projection diverged or pose too far from the path."""


class NonFiniteStateError(NumericError):
    """A state or derivative evaluation produced NaN or infinity."""


class FactorizationError(NumericError):
    """A positive-definite factorization failed even after jitter escalation."""


class InfeasibleError(NumericError):
    """A constrained optimization problem was reported infeasible."""
