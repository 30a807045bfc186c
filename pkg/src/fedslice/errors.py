"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad dimensions, out-of-range knobs, unknown keys."""


class DataSchemaError(ValueError):
    """A dataset file does not match the expected column schema."""


class DataParseError(ValueError):
    """A dataset file contains a cell that cannot be parsed."""


class GenerationError(ValueError):
    """A synthetic-data profile is degenerate and cannot produce data."""


class NumericError(ArithmeticError):
    """A numeric operation produced or received non-finite values."""


class DegenerateAttributionError(ArithmeticError):
    """All attribution mass is zero, so proportional normalization is undefined."""
