"""Exception types shared across the package."""


class KanError(Exception):
    """Base class for all package errors."""


class ShapeError(KanError, ValueError):
    pass


class SingularMatrixError(KanError, ArithmeticError):
    pass


class StateError(KanError, RuntimeError):
    """Raised when an operation is called out of order (e.g. backward before forward)."""


class ConfigError(KanError, ValueError):
    pass


class FormatError(KanError, ValueError):
    """Malformed model or data file."""


class DataError(KanError, ValueError):
    pass


class NumericError(KanError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, *, epoch=None, batch=None, max_abs_param=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.max_abs_param = max_abs_param
