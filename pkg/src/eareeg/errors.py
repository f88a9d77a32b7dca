"""Exception types shared across the package.

All of them derive from ``ValueError`` or ``ArithmeticError`` so callers
that only care about the builtin categories can keep catching those.
"""


class DataError(ValueError):
    """Malformed, inconsistent or insufficient input data."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class NumericError(ArithmeticError):
    """Non-finite values produced during a numerical computation."""
