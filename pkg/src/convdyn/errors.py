"""Exception hierarchy shared across the package."""


class ConvDynError(Exception):
    """Base class for all package errors."""


class InvalidConfiguration(ConvDynError, ValueError):
    pass


class GuardViolation(ConvDynError, ValueError):
    """An event was applied to a state where its guard is false."""


class InconsistentUpdate(ConvDynError, ValueError):
    """A reaction-matrix update left an indicator outside {0, 1}."""


class StateSpaceTooLarge(ConvDynError, ValueError):
    pass


class ParameterError(ConvDynError, ValueError):
    pass


class DataError(ConvDynError, ValueError):
    """Malformed or insufficient input data."""


class InsufficientData(DataError):
    pass


class AlignmentError(DataError):
    pass


class DegenerateSignal(AlignmentError):
    pass


class NumericalError(ConvDynError, ArithmeticError):
    pass


class DomainError(ConvDynError, ValueError):
    pass
