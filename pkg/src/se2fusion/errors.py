"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Invalid configuration or input data supplied by the caller."""


class FormatError(ValidationError):
    """A data file failed to parse; carries a 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason
