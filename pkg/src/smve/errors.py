"""Exception and warning types raised across the package."""


class SmveError(Exception):
    """Base class for all package errors."""


class InputError(SmveError, ValueError):
    """Bad user input: malformed matrices, out-of-range arguments."""


class NumericalError(SmveError, ArithmeticError):
    """A computation could not be carried out to the required accuracy."""


class InvalidModel(InputError):
    pass


class InvalidCovariance(InputError):
    pass


class InvalidInput(InputError):
    pass


class BudgetExceeded(InputError):
    pass


class WrongModel(InputError):
    pass


class InvalidRip(InputError):
    pass


class InvalidBias(InputError):
    pass


class Unsupported(InputError):
    pass


class OrderTooLarge(InputError):
    pass


class GradientUnavailable(NumericalError):
    pass


class SingularSubmatrix(NumericalError):
    pass


class InvalidEstimator(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class McFailure(NumericalError):
    """Too many Monte Carlo trials failed."""


class OverflowWarning(RuntimeWarning):
    """An exponential saturated to +inf."""


class TruncationWarning(RuntimeWarning):
    """A truncated series did not pass its tail test."""
