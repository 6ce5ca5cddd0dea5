"""Exception types raised across the package."""


class TrendGCNError(Exception):
    """Base class for all package errors."""


class ShapeError(TrendGCNError, ValueError):
    """Operand extents are incompatible."""


class ConfigError(TrendGCNError, ValueError):
    """A configuration value is outside its allowed domain."""


class ContractError(TrendGCNError, RuntimeError):
    """An operation was called outside the regime where it is defined."""


class InputError(TrendGCNError, ValueError):
    """Input data is malformed (non-finite values, bad file contents, ...)."""


class DivergenceError(TrendGCNError, RuntimeError):
    """Training produced a non-finite loss."""
