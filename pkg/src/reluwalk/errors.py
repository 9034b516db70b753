"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class ReluwalkError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ReluwalkError):
    """Invalid experiment configuration or architecture descriptor."""


class DataError(ReluwalkError):
    """Dataset file missing, malformed, or inconsistent."""


class NumericError(ReluwalkError):
    """Non-finite values, pathological inputs, or diverged computations."""
