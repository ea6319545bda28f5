"""Exception types raised across the package."""


class AbmEqlError(Exception):
    """Base class for every error raised by abm_eql."""


class ConfigError(AbmEqlError, ValueError):
    """Invalid configuration, argument or input data shape."""


class DomainError(ConfigError):
    """A request that is mathematically undefined for the given parameters."""


class NumericalError(AbmEqlError, ArithmeticError):
    """An unrecoverable numerical failure."""
