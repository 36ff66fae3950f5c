"""Exception types shared across the package."""


class BandlearnError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BandlearnError, ValueError):
    """Input data violates an operation's preconditions (shape, length, finiteness)."""


class InvalidBandError(BandlearnError, ValueError):
    """A frequency band is empty or inconsistent with the sampling setup."""


class ConfigError(BandlearnError, ValueError):
    """A configuration object or file is invalid."""


class InvalidStateError(BandlearnError, RuntimeError):
    """An operation was called with stale or mismatched internal state."""


class NumericError(BandlearnError, ArithmeticError):
    """A non-finite value appeared where the numeric contract forbids it."""
