"""Exception hierarchy shared by every module of the package."""


class IgnnError(Exception):
    """Base class for all package errors."""


class ShapeError(IgnnError, ValueError):
    pass


class DomainError(IgnnError, ValueError):
    pass


class NumericError(IgnnError, ArithmeticError):
    """Raised when a computation produces NaN/Inf."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(IgnnError, RuntimeError):
    """An iterative solve did not reach its tolerance; ``residual`` holds the last value."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ParseError(IgnnError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConfigError(IgnnError, ValueError):
    pass


class PreconditionError(IgnnError, RuntimeError):
    pass
