"""Exception hierarchy shared by all modules."""


class PoletskyError(Exception):
    """Base class for library errors."""


class InvalidInputError(PoletskyError, ValueError):
    pass


class ConfigError(PoletskyError, ValueError):
    pass


class DomainError(PoletskyError, ValueError):
    pass


class NumericError(PoletskyError, ArithmeticError):
    pass


class UndefinedValueError(PoletskyError, ValueError):
    pass


class DegenerateMapError(PoletskyError, ValueError):
    pass


class SingularMatrixError(NumericError):
    """Raised when a matrix is singular to working tolerance.

    ``abs_det`` carries |det A| at the point of failure.
    """

    def __init__(self, abs_det: float, message: str | None = None):
        self.abs_det = float(abs_det)
        super().__init__(message or f"singular matrix (|det| = {self.abs_det:.3e})")
