from typing import Any

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class AppError(Exception):
    # AppError carries a human readable message plus the exit status the CLI maps it to
    status = EXIT_RUNTIME

    def __init__(self, message: str, status: int | None = None, details: Any | None = None):
        super().__init__(message)
        self.message = message
        if status is not None:
            self.status = status
        self.details = details


# Validation failures: bad shapes, parameters, labels or input files.
class ShapeError(AppError):
    status = EXIT_VALIDATION


class ParameterError(AppError):
    status = EXIT_VALIDATION


class LabelError(AppError):
    status = EXIT_VALIDATION


class BatchSizeError(AppError):
    status = EXIT_VALIDATION


class ConfigError(AppError):
    status = EXIT_VALIDATION


class FormatError(AppError):
    status = EXIT_VALIDATION


class ConsistencyError(AppError):
    status = EXIT_VALIDATION


# Runtime failures: math domain, divergence and storage.
class DomainError(AppError):
    pass


class NumericError(AppError):
    pass


class StorageError(AppError):
    pass
