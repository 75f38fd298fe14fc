"""Exception hierarchy shared by every normcraft module."""


class NormcraftError(Exception):
    """Base class for all package errors."""


class StructuralError(NormcraftError, ValueError):
    """Inputs have the wrong shape, size, or are missing required parts."""


class ParseError(StructuralError):
    """A text file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DegenerateGeometryError(NormcraftError, ArithmeticError):
    """Geometry is too degenerate for the requested fit."""


class NumericalError(NormcraftError, ArithmeticError):
    """A computation produced non-finite values."""


class DivergenceError(NumericalError):
    """Training loss became NaN or infinite."""
