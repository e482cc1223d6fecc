"""Exception types shared across the package."""


class IGCLError(Exception):
    """Base class for all errors raised by igcl."""


class ShapeError(IGCLError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(IGCLError, ValueError):
    """An input lies outside the domain of a function (e.g. log of a non-positive value)."""


class UsageError(IGCLError, ValueError):
    """A precondition on arguments or configuration was violated."""


class NumericError(IGCLError, FloatingPointError):
    """A computation produced a non-finite value."""


class ParseError(IGCLError, ValueError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")
