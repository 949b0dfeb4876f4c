"""Exception types shared across the package."""


class BactipotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(BactipotError, ValueError):
    """A parameter or input value violates its documented domain."""


class CountOverflowError(BactipotError, OverflowError):
    """A population count would exceed the supported 63-bit range."""


class DatasetFormatError(BactipotError, ValueError):
    """A Ct dataset file is malformed.

    Attributes:
        line: 1-based line number of the offending record, or None when the
            problem is not tied to a specific line.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(BactipotError, ValueError):
    """Too few usable observations remain to carry out an estimation step."""


class SingularDesignError(BactipotError, ValueError):
    """A concentration design cannot support the requested computation."""
