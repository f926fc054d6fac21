"""Exception types raised by hostcp."""


class ShapeError(ValueError):
    """Array dimensions do not chain or match."""


class DataFormatError(ValueError):
    """Malformed dataset file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """Invalid trainer or experiment configuration."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical core."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class DegenerateKKTError(NumericalError):
    """The linearized optimality system could not be solved."""

    def __init__(self, message, constraints=()):
        super().__init__(message)
        self.constraints = tuple(constraints)


class StaleSolutionError(NumericalError):
    """A solution no longer satisfies the optimality tolerance of its problem."""
