"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or value."""
