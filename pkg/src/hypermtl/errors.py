"""Exception types shared across the package.

The CLI maps these to distinct exit codes, so modules should raise the
most specific type that applies.
"""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericalError(ArithmeticError):
    """A computation produced NaN/Inf or gradients blew up."""


class ConfigError(Exception):
    """A config file or flag combination is invalid."""


class DataError(Exception):
    """Input data is missing, malformed, or inconsistent."""
