"""Exception types raised across the package."""


class BoundsError(Exception):
    """Base class for all package errors."""


class ParameterError(BoundsError, ValueError):
    """Invalid numeric parameter (radius, counts, tolerances)."""


class MeshParseError(BoundsError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class CoefficientError(BoundsError, ValueError):
    """Coefficient matrix is not symmetric positive definite."""


class ConstraintError(BoundsError, ValueError):
    pass


class UsageError(BoundsError, ValueError):
    """An operation was called with inputs outside its contract."""


class DomainError(BoundsError, ValueError):
    pass


class DataError(BoundsError, ValueError):
    pass


class ConfigError(BoundsError, ValueError):
    pass


class ConvergenceError(BoundsError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class BoundViolation(BoundsError, AssertionError):
    """A computed lower bound exceeds an upper bound (or the oracle)."""
