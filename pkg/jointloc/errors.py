"""Exception types raised by the jointloc engine.

All of them derive from builtin exceptions so callers that only know about
ValueError / ArithmeticError keep working.
"""
from __future__ import annotations

from typing import Optional


class ConfigError(ValueError):
    """Malformed scenario, replay or command-line input."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        self.path = path
        self.line = line
        self.message = message
        prefix = ""
        if path:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{prefix}{message}")


class GeometryError(ValueError):
    """Raised for coincident points where a bearing is undefined."""


class DegenerateBeliefError(ArithmeticError):
    """A belief lost all of its probability mass."""


class AssociationError(ArithmeticError):
    """The data-association iteration hit a zero denominator."""

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        self.row = row
        super().__init__(message if row is None else f"{message} (row {row})")


class OracleSizeError(ValueError):
    """Exhaustive association enumeration would be too large."""
