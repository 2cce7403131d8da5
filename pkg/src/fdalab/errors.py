"""Exception hierarchy shared across the package."""


class FdaLabError(Exception):
    """Base class for all package errors."""


class ConfigError(FdaLabError, ValueError):
    """Invalid configuration value; maps to CLI exit code 2."""


class DomainError(FdaLabError, ValueError):
    """Input outside the physical or mathematical domain of an operation."""


class NumericalError(FdaLabError, RuntimeError):
    """Numerical failure (singular system, non-finite result); CLI exit code 3."""
