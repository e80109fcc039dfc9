"""Exception hierarchy shared by all rydkin modules."""


class RydkinError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(RydkinError, ValueError):
    """A physical or numerical parameter is outside its allowed domain."""


class ValidationError(RydkinError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class ConfigError(RydkinError):
    """A scenario document violates the schema.

    ``path`` is the dotted key path of the offending entry.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CapacityError(RydkinError):
    """The requested system is too large for the chosen exact method."""


class UndefinedStatisticError(RydkinError, ZeroDivisionError):
    """A statistic is undefined for the given sample (e.g. zero mean)."""


class FitError(RydkinError):
    """A fit could not be performed on the supplied points."""


class IntegrationError(RydkinError, RuntimeError):
    """An ODE integrator failed to reach the requested tolerance."""


class OutputError(RydkinError, OSError):
    """Results could not be written; the message names the path."""
