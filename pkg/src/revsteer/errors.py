"""Exception types raised across the package."""


class RevsteerError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RevsteerError, ValueError):
    pass


class NotFoundError(RevsteerError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class SingularityError(RevsteerError, ArithmeticError):
    pass


class NumericalOverflowError(RevsteerError, FloatingPointError):
    pass


class TrainingDivergenceError(RevsteerError, FloatingPointError):
    pass


class OutOfRangeError(RevsteerError, ValueError):
    pass
