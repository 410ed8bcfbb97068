"""
Error types shared by every corticast service

Each error carries the code reported in the CLI's error response and the
process exit code it maps to.
"""

from typing import Any, Dict, List, Optional


class CorticastError(Exception):
    """Base error with an error code, an exit code and structured details"""

    error_code = "INTERNAL_ERROR"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = dict(details or {})

    def with_context(self, **context: Any) -> "CorticastError":
        """Prefix the message with run/fold context and record it in details"""
        prefix = ", ".join(f"{key} {value}" for key, value in context.items())
        self.message = f"{prefix}: {self.message}"
        self.args = (self.message,)
        self.details.update(context)
        return self

    def __str__(self) -> str:
        return self.message


class InvalidArgumentError(CorticastError):
    error_code = "INVALID_ARGUMENT"
    exit_code = 2


class ParseError(CorticastError):
    error_code = "PARSE_ERROR"
    exit_code = 3

    def __init__(self, message: str, line: int, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"line {line}: {message}", details)
        self.line = line
        self.details["line"] = line


class SchemaError(CorticastError):
    error_code = "SCHEMA_ERROR"
    exit_code = 3


class FormatError(CorticastError):
    error_code = "FORMAT_ERROR"
    exit_code = 3


class DegenerateChannelError(CorticastError):
    error_code = "DEGENERATE_CHANNEL"
    exit_code = 3


class MetadataError(CorticastError):
    error_code = "MISSING_METADATA"
    exit_code = 4

    def __init__(self, message: str, subjects: List[str], details: Optional[Dict[str, Any]] = None):
        listed = ", ".join(subjects)
        super().__init__(f"{message}: {listed}", details)
        self.subjects = list(subjects)
        self.details["subjects"] = self.subjects


class NumericError(CorticastError):
    error_code = "NUMERIC_ERROR"
    exit_code = 5


class ContractViolationError(CorticastError):
    error_code = "CONTRACT_VIOLATION"
    exit_code = 1
