"""Exception hierarchy shared by every module."""


class UnsupDepthError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UnsupDepthError, ValueError):
    """Shapes, layer geometry or config values that cannot work together."""


class NumericError(UnsupDepthError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class UsageError(UnsupDepthError, RuntimeError):
    """An API was called out of contract (e.g. backward on a non-scalar)."""


class DivergenceError(UnsupDepthError, RuntimeError):
    """Training loss blew up; raised by the divergence detector."""


class EvaluationError(UnsupDepthError, ValueError):
    """Metrics requested over an empty or invalid pixel set."""


class SpecError(ConfigurationError):
    """Invalid synthetic-scene specification."""
