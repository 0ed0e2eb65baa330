"""Exception types shared across the package."""


class ParafunError(Exception):
    """Base class for all errors raised by parafun."""


class DimensionError(ParafunError, ValueError):
    """Operand shapes are inconsistent."""


class NumericalError(ParafunError, ArithmeticError):
    """A computation produced non-finite values or hit a singular system.

    ``interval`` holds the coarse interval index when the failure happened
    inside a time propagation, otherwise ``None``.
    """

    def __init__(self, msg, interval=None):
        super().__init__(msg)
        self.interval = interval


class SingularMatrixError(NumericalError):
    """A factorization met a zero (or numerically zero) pivot."""


class UnsupportedSchemeError(ParafunError, ValueError):
    """The requested time scheme cannot be used with the given flow."""


class NotSPDError(NumericalError):
    """A quadratic form expected to be positive was not."""


class DivergenceError(NumericalError):
    """An iteration blew up."""


class StallError(NumericalError):
    """An optimization loop stopped decreasing its objective."""


class MatrixMarketError(ParafunError, ValueError):
    """Malformed Matrix Market input.

    ``line`` is the 1-based line number of the offending line.
    """

    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line
