"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """Inputs violate a documented precondition (shapes, ranges, simplex)."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or ill-conditioned result."""


class NotStabilizableError(NumericalError):
    """Riccati iteration failed to converge within its iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class GenerationError(RuntimeError):
    """A random model generator exhausted its rejection budget."""
