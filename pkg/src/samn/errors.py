"""Exception hierarchy shared by every module."""


class SamnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SamnError, ValueError):
    pass


class NumericError(SamnError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(SamnError, ValueError):
    pass


class DataError(SamnError, ValueError):
    pass


class StateError(SamnError, RuntimeError):
    """The model is not in a state that allows the requested operation."""


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
