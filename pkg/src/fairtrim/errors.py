"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""
