class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class TrainingError(RuntimeError):
    """Raised when an inner step produces a non-finite loss or gradient."""
