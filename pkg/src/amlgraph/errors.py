"""Shared exception types.

Every failure mode in the package maps onto one of these so callers (and the
CLI) can distinguish bad input data from bad arguments from numeric blowups.
"""


class ParseError(ValueError):
    """A raw input file is malformed. Carries the 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f" [{path}"
            where += f":{line}]" if line is not None else "]"
        elif line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)


class StructuralError(ValueError):
    """Input files disagree with each other (e.g. an edge endpoint has no feature row)."""


class ShapeError(ValueError):
    """An array argument has the wrong shape, dtype, or index range."""


class NumericsError(ArithmeticError):
    """A numeric result left the finite range (NaN or infinity)."""


class TrainingError(RuntimeError):
    """Training diverged or was otherwise aborted; names the epoch where possible."""
