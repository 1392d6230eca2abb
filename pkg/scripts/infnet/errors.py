"""Exception taxonomy. ``exit_code`` is what ``cli.main`` returns for each family."""
from __future__ import annotations


class InfnetError(Exception):
    exit_code = 1


class ConfigError(InfnetError):
    exit_code = 2


class DataError(InfnetError):
    exit_code = 3


class SchemaViolationError(DataError):
    """An example (or index) does not fit the declared FeatureSchema."""


class DatasetParseError(DataError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SyntheticSpecError(DataError):
    pass


class NoSignalError(DataError):
    """Every task label is masked for an entire batch."""


class DivergenceError(InfnetError):
    exit_code = 4

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class StorageError(InfnetError):
    exit_code = 5


class CheckpointVersionError(StorageError):
    pass


class CheckpointCorruptError(StorageError):
    pass


class CheckpointShapeError(StorageError):
    pass


class ShapeError(InfnetError, ValueError):
    exit_code = 3


class UndefinedMetricError(InfnetError, ValueError):
    exit_code = 3


class NonDeterministicFunctionError(InfnetError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InfnetError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return StorageError.exit_code
    return 1
