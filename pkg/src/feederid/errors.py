"""Exception hierarchy shared by all modules."""


class FeederIdError(Exception):
    """Base class for every error raised by this package."""


# construction / configuration -------------------------------------------------

class FeederError(FeederIdError, ValueError):
    pass


class CycleDetected(FeederError):
    pass


class Disconnected(FeederError):
    pass


class DuplicateLine(FeederError):
    pass


class NonPositiveReactance(FeederError):
    pass


class SingularIncidence(FeederError):
    pass


class DimensionMismatch(FeederIdError, ValueError):
    pass


class InvalidConfig(FeederIdError, ValueError):
    pass


class MissingRatios(InvalidConfig):
    pass


class EmptyObservedSet(InvalidConfig):
    pass


# data ingestion ---------------------------------------------------------------

class DataFormatError(FeederIdError, ValueError):
    pass


class RaggedRows(DataFormatError):
    pass


class UnknownBusLabel(DataFormatError):
    pass


class NonNumericCell(DataFormatError):
    pass


# numerical failures -----------------------------------------------------------

class NumericalError(FeederIdError, ArithmeticError):
    pass


class NoConvergence(NumericalError):
    pass


class DivergedVoltage(NumericalError):
    pass


class SingularNormalMatrix(NumericalError):
    pass


class MonotonicityViolation(NumericalError):
    pass


class MaxItersExceeded(NumericalError, RuntimeWarning):
    """Raised in strict mode, otherwise issued as a warning."""


class EmptyFold(InvalidConfig):
    pass
