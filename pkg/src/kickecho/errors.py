"""Exception types shared across the package."""


class KickEchoError(Exception):
    """Base class for all package errors."""


class ArgumentError(KickEchoError, ValueError):
    """An argument is outside the domain an operation accepts."""


class ConfigError(KickEchoError, ValueError):
    """A configuration value makes the requested computation meaningless."""


class NumericalError(KickEchoError, ArithmeticError):
    """A numerical procedure failed to reach its accuracy target."""


class ResourceError(KickEchoError, MemoryError):
    """A request would exceed a configured memory or size cap."""


class FitError(KickEchoError, RuntimeError):
    """A fit is infeasible (too few points) or failed to converge.

    ``last`` carries the last iterate when one is available.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
