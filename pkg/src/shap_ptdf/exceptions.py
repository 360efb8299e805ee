"""Exception hierarchy shared by the library and the command line."""


class ShapPtdfError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ShapPtdfError, ValueError):
    """Malformed input data or a violated data invariant."""


class CaseFormatError(DataError):
    """A case file line could not be parsed."""

    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class NetworkValidationError(DataError):
    """A network violates one of its structural invariants."""


class ModelFormatError(DataError):
    """A model file is corrupt or truncated."""


class ModelVersionError(ModelFormatError):
    """A model file was written by an incompatible format version."""


class NumericalError(ShapPtdfError, ArithmeticError):
    """Singular or rank-deficient linear algebra."""
