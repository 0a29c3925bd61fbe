"""Exception hierarchy.

Validation problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so that callers (and the CLI exit-code mapping) can tell
bad input apart from a solver that gave up.
"""


class LVLMCError(Exception):
    """Base class for all package errors."""


class ValidationError(LVLMCError, ValueError):
    """Input violates a documented precondition."""


class SymmetryError(ValidationError):
    """Matrix is not symmetric within tolerance."""


class DimensionMismatchError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class DegenerateDataError(ValidationError):
    """A variable has no spread (constant values, zero variance)."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class CompositionError(ValidationError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConfigError(ValidationError):
    pass


class CapacityError(ValidationError):
    """Problem is too large for the dense backend."""


class NumericalError(LVLMCError, ArithmeticError):
    """Base class for numerical failures."""


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class MatrixRangeError(NumericalError, OverflowError):
    """Matrix function would overflow."""


class ConvergenceError(NumericalError):
    """Iterative solver hit its iteration cap.

    Attributes
    ----------
    last : object
        Last iterate.
    residual : float
        Residual (or gradient norm) at the last iterate.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class FitError(NumericalError):
    pass


class KrigingError(NumericalError):
    pass
