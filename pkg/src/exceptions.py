"""
Error hierarchy for dgtta.

Every error raised on purpose by the library derives from DgttaError and
carries the process exit code the CLI reports for it:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from typing import Optional


class DgttaError(Exception):
    """Base class for all dgtta errors."""

    exit_code: int = 1


class InvalidArgumentError(DgttaError, ValueError):
    """An argument violates an operation's preconditions."""

    exit_code = 2


class ConfigurationError(DgttaError, ValueError):
    """Inconsistent configuration (pipeline vs channels, manifests, groups)."""

    exit_code = 2


class DataError(DgttaError):
    """Input data is missing, unreadable or malformed."""

    exit_code = 3


class VolumeFormatError(DataError, ValueError):
    """A volume file or its sidecar header is malformed."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class GenerationError(DataError):
    """The phantom generator could not satisfy its constraints."""

    def __init__(self, message: str, sample_index: Optional[int] = None):
        super().__init__(message)
        self.sample_index = sample_index


class DegenerateInputError(DataError, ValueError):
    """Nothing left to supervise, e.g. an empty consistency mask."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class InsufficientDataError(DataError, ValueError):
    """Too few observations for a statistical test."""


class NumericalFailureError(DgttaError, ArithmeticError):
    """A loss or prediction became NaN or infinite."""

    exit_code = 4


class StageError(DgttaError):
    """A scenario stage failed; wraps the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
