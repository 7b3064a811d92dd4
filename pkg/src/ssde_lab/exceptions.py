"""Exception hierarchy.

Every error raised by the package derives from :class:`SSDEError`. Argument
problems additionally derive from :class:`ValueError` so that generic callers
(scikit-learn utilities, argparse glue) can catch them the usual way.
"""


class SSDEError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SSDEError, ValueError):
    pass


class PreconditionViolation(SSDEError, ValueError):
    pass


class AssumptionViolation(SSDEError, ValueError):
    """A model regularity condition required by the operation does not hold."""


class NumericDomainError(SSDEError, ArithmeticError):
    pass


class SimulationBlowup(NumericDomainError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivisionGuardError(NumericDomainError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DegenerateWeightsError(NumericDomainError):
    pass


class InvalidStartError(SSDEError, ValueError):
    pass


class InsufficientSampleError(SSDEError, ValueError):
    pass


class ConfigError(SSDEError, ValueError):
    """Malformed or unknown experiment configuration."""
