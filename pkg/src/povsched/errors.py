"""Exception types shared across the package.

The CLI maps these onto process exit codes (validation -> 2,
infeasible -> 3, non-convergence -> 4); the HTTP service maps them
onto status codes. Everything else is a plain bug and propagates.
"""

__all__ = [
    "PovschedError",
    "ValidationError",
    "InfeasibleError",
    "ConvergenceError",
    "CalibrationError",
]


class PovschedError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(PovschedError, ValueError):
    """Bad input data or configuration: malformed files, broken
    invariants, misaligned grids, negative volumes and the like."""


class InfeasibleError(PovschedError):
    """The order cannot be completed under its constraints
    (typically maxPoV * V1 < |X1|)."""


class ConvergenceError(PovschedError):
    """The QP solver stopped without reaching its optimality tolerances."""


class CalibrationError(PovschedError, ValueError):
    """Regression could not be carried out (e.g. rank-deficient design)."""
