"""Exception types shared across the package."""


class ArA3CError(Exception):
    """Base class for all package errors."""


class DivergenceError(ArA3CError, ArithmeticError):
    """Raised when an action, loss or gradient stops being finite."""


class ConfigError(ArA3CError, ValueError):
    """Invalid or unknown configuration values."""


class CheckpointError(ArA3CError, ValueError):
    """A checkpoint file is corrupt, from another format version, or shaped wrong."""
