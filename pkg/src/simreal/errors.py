"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SimRealError(Exception):
    """Base class for every error raised by simreal."""


# --- data -----------------------------------------------------------------

class ParseError(SimRealError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(SimRealError):
    pass


class EmptyInput(SimRealError):
    pass


class AlignmentError(SimRealError):
    pass


class DegenerateSeries(SimRealError):
    pass


class EmptySegment(SimRealError):
    pass


class OverlapError(SimRealError):
    pass


# --- numerics -------------------------------------------------------------

class DimensionMismatch(SimRealError, ValueError):
    pass


class InsufficientData(SimRealError):
    pass


class Infeasible(SimRealError):
    pass


class NotConverged(SimRealError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")


class NonFiniteInput(SimRealError, ValueError):
    pass


class NonPositiveEquity(SimRealError, ValueError):
    pass


# --- environment / agents -------------------------------------------------

class InsufficientHistory(SimRealError):
    pass


class EpisodeFinished(SimRealError):
    pass


class NonFiniteGradient(SimRealError):
    pass


# --- harness --------------------------------------------------------------

class SimplexViolation(SimRealError, ValueError):
    pass


class ArchiveIOError(SimRealError, OSError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class SchemaVersionMismatch(SimRealError):
    pass


class ConfigError(SimRealError):
    def __init__(self, message: str, keys: tuple[str, ...] = ()):
        self.keys = tuple(keys)
        super().__init__(message)
