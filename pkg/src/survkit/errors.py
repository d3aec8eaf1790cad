"""Exception types shared across the package."""


class SurvKitError(Exception):
    """Base class for all survkit errors."""


class ConfigError(SurvKitError):
    """Invalid or missing configuration."""


class DataError(SurvKitError):
    """Malformed or inconsistent input data."""


class TrainingError(SurvKitError):
    """A model fit failed or produced non-finite state."""


class ConvergenceError(TrainingError):
    """An iterative solver diverged or hit its iteration cap."""


class NoSurvivalFunctionError(SurvKitError):
    """Raised when survival curves are requested from a model family that
    defines no survival function (risk-only or time-regression families)."""
