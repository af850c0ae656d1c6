"""Exception and warning types shared across the package."""

from __future__ import annotations


class TsNormLabError(Exception):
    """Base class for all package errors."""


class ShapeError(TsNormLabError, ValueError):
    """Operand shapes are incompatible."""


class ConvergenceError(TsNormLabError, ArithmeticError):
    """An iterative routine did not reach its tolerance.

    ``gap`` holds the last measured residual so callers can decide whether
    the estimate is still usable.
    """

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class NumericError(TsNormLabError, ArithmeticError):
    """A non-finite value appeared; ``stage`` names where."""

    def __init__(self, message: str, stage: str | None = None, index: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.index = index


class TrainingError(NumericError):
    """Training diverged (loss became NaN or infinite)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message, stage="train")
        self.epoch = epoch


class UnsupportedError(TsNormLabError, ValueError):
    """Requested configuration is outside what is implemented."""


class UnsupportedDimensionError(UnsupportedError):
    """Token dimension d = 1 makes the (d/(d-1))^2 factor undefined."""


class ParseError(TsNormLabError, ValueError):
    """Malformed input file. ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.column = column


class ConfigError(TsNormLabError, ValueError):
    """Bad or incomplete configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DegeneracyWarning(UserWarning):
    """A scale statistic hit the eps floor (constant channel)."""


class ParseWarning(UserWarning):
    """Non-fatal oddity in an input file, e.g. an unknown header tag."""
