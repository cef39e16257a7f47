"""Exception hierarchy shared by every module."""


class CondGradError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CondGradError, ValueError):
    pass


class DegenerateMatrixError(CondGradError, ArithmeticError):
    """Power iteration hit a zero matrix or kept producing zero products."""


class NumericalError(CondGradError, ArithmeticError):
    """A run produced NaN/Inf."""


class FwIterationError(CondGradError):
    """Wraps an error raised inside a Frank-Wolfe iteration."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


class TapeError(CondGradError):
    pass


class FormatError(CondGradError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
