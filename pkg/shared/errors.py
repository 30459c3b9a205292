class SeizureDetectError(Exception):
    pass


class DataError(SeizureDetectError):
    """Malformed, misaligned or otherwise unusable input data."""


class ShapeMismatchError(DataError):
    pass


class NonFiniteGradientError(DataError):
    pass


class ConfigError(ValueError, SeizureDetectError):
    """Invalid configuration value."""
