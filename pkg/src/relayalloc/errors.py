"""Error types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid experiment configuration (bad weights, missing link specs, ...)."""


class CalibrationError(RuntimeError):
    """Power-price calibration could not bracket or meet the target average power."""
