"""
Event Anonymization - Error Types

This module defines the exception hierarchy shared by all evanon modules.
Each family maps onto one CLI exit code.

Classes:
- EvanonError - Base class for all package errors
- UsageError - Bad configuration or arguments (exit code 1)
- DataError - Malformed or inconsistent input data (exit code 2)
- EventParseError - Event file syntax/bounds/order violation at a line
- CheckpointError - Checkpoint/architecture mismatch naming a parameter
- ShapeMismatchError - Array shape differs from the expected one
- NumericalError - Non-finite loss or failed gradient check (exit code 3)
"""

from __future__ import annotations

from typing import Optional, Sequence


class EvanonError(Exception):
    """Base class for evanon errors."""

    exit_code: int = 1


class UsageError(EvanonError):
    exit_code = 1


class DataError(EvanonError):
    exit_code = 2


class EventParseError(DataError):
    """Raised when an event file line cannot be accepted."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CheckpointError(DataError):
    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        if parameter is not None:
            message = f"parameter '{parameter}': {message}"
        super().__init__(message)


class ShapeMismatchError(DataError, ValueError):
    """Raised by layers and metrics when input shapes do not chain."""

    def __init__(self, what: str, expected: Sequence[object], actual: Sequence[object]):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")


class NumericalError(EvanonError):
    exit_code = 3


def exit_code_for(exc: BaseException) -> int:
    """Return the CLI exit code for an exception."""
    if isinstance(exc, EvanonError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, NotADirectoryError)):
        return DataError.exit_code
    return UsageError.exit_code
