"""
lqdim/core/exceptions.py
Custom exceptions for clean error handling throughout the package.
"""
from __future__ import annotations

from typing import Any


class AppError(Exception):
    """Base exception for all lqdim errors."""

    exit_code = 1

    def __init__(self, message: str, original: Exception | None = None):
        super().__init__(message)
        self.message = message
        self.original = original

    def __str__(self):
        if self.original:
            return f"{self.message} (caused by: {self.original})"
        return self.message


class DomainError(AppError, ValueError):
    """Raised when an operation is called outside its mathematical domain."""

    exit_code = 2


class SpecParseError(AppError):
    """Raised when an IFS spec file or run configuration cannot be parsed."""

    exit_code = 2

    def __init__(
        self,
        message: str,
        field: str | None = None,
        line: int | None = None,
        original: Exception | None = None,
    ):
        super().__init__(message, original=original)
        self.field = field
        self.line = line


class ResourceError(AppError):
    """Raised when a word tree would exceed the configured budget."""

    exit_code = 3

    def __init__(self, message: str, fitting_level: int | None = None, original: Exception | None = None):
        super().__init__(message, original=original)
        self.fitting_level = fitting_level


class InvariantViolationError(AppError):
    """Raised when a constructed object breaks one of its defining invariants."""

    exit_code = 1

    def __init__(self, message: str, witnesses: list[Any] | None = None, original: Exception | None = None):
        super().__init__(message, original=original)
        self.witnesses = witnesses or []


class NonDoublingError(InvariantViolationError):
    """Raised by the entropy gate when the measure does not look doubling."""
    pass
