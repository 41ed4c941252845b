"""Exception hierarchy shared across the package."""


class CvtnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CvtnError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(CvtnError, ValueError):
    """Invalid configuration (kernel size, head count, growth rate, ...)."""


class NumericError(CvtnError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(CvtnError, RuntimeError):
    """An API precondition was violated (non-scalar loss, missing state, ...)."""


class DataError(CvtnError, ValueError):
    """Malformed or insufficient input data."""


class TrainingAborted(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, *, lr=None, batch_index=None, epoch=None):
        super().__init__(message)
        self.lr = lr
        self.batch_index = batch_index
        self.epoch = epoch
