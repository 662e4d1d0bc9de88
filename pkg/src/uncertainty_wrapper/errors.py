"""Exception hierarchy shared by the library, the CLI and the MCP server.

Each error carries the process exit code the ``uwrap`` CLI reports for it.
I/O problems are left as builtin ``OSError`` subclasses (exit code 2).
"""

from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_DATA = 3


class UncertaintyWrapperError(Exception):
    """Base class for all domain errors."""

    exit_code: int = EXIT_DATA


class ConfigError(UncertaintyWrapperError, ValueError):
    """Invalid configuration (panel, generator, variant or run config)."""

    exit_code = EXIT_CONFIG


class DataError(UncertaintyWrapperError, ValueError):
    """Input data violates the expected schema or content rules."""


class ParseError(DataError):
    """A CSV row could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    """Columns or tables do not match the expected layout."""


class InputError(UncertaintyWrapperError, ValueError):
    """Arguments are inconsistent (dimension or length mismatch)."""


class EventLookupError(UncertaintyWrapperError, KeyError):
    """An external prediction table has no entry for the requested event."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DomainError(UncertaintyWrapperError, ValueError):
    """A numeric argument is outside the domain of the function."""


class TrainingError(UncertaintyWrapperError, RuntimeError):
    """A model could not be fitted from the given data."""
