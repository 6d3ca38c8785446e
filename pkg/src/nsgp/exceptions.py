"""Exception types raised by the nsgp package."""


class NumericalError(ArithmeticError):
    """A matrix factorization or density evaluation failed numerically."""


class OptimizationError(RuntimeError):
    """Every MAP restart failed.

    ``diagnostics`` holds one message per restart.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class SamplingError(RuntimeError):
    """The sampler hit numerical failures in too many transitions."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
