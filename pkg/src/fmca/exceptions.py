"""Exception hierarchy.

Each error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class FMCAError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FMCAError, ValueError):
    exit_code = 1


class DataError(FMCAError):
    """Problem with the input data (bad file, too few utterances, ...)."""

    exit_code = 2


class NumericalError(FMCAError, ArithmeticError):
    """Numerical breakdown (indefinite matrix, divergence, ...)."""

    exit_code = 3


class NotPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class SilentSignal(DataError, ValueError):
    pass


class AllSilent(DataError, ValueError):
    pass


class SignalTooShort(DataError, ValueError):
    pass


class OddFrameLength(ConfigError):
    pass


class TraceTooShort(DataError, ValueError):
    pass


class InconsistentFeatureShape(DataError, ValueError):
    pass


class InsufficientData(DataError, ValueError):
    pass


class DegenerateClass(InsufficientData):
    """A class has fewer than two utterances, so no cross-utterance pair exists."""


class NoValidFiles(DataError):
    pass


class InvalidPmf(DataError, ValueError):
    pass


class InvalidRho(ValueError, FMCAError):
    exit_code = 1


class DimensionMismatch(ShapeMismatch):
    pass
