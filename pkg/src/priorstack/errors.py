"""Exception types shared across the package."""


class PriorstackError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(PriorstackError, ValueError):
    """A numeric parameter is outside its admissible range."""


class DataValidationError(PriorstackError, ValueError):
    """Input data violate a structural requirement (shape, finiteness, coding)."""


class DegenerateResponseError(PriorstackError):
    """The response admits no fit (e.g. single-class binomial target)."""


class DegenerateFoldError(PriorstackError):
    """A cross-validation fold cannot retain both classes."""


class UndefinedMetricError(PriorstackError):
    """An evaluation metric is undefined for the given inputs."""


class ConfigurationError(PriorstackError):
    """Mutually inconsistent or unsupported configuration."""
