"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, data-shaped errors
(RecordParseError, SchemaError, DataError) -> 3, anything else -> 4.
"""


class CorpusForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CorpusForgeError):
    """Invalid configuration: bad policy rule, unknown stage, bad parameter."""


class RecordParseError(CorpusForgeError):
    """A JSONL line could not be parsed. Carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class SchemaError(CorpusForgeError):
    """A record or file violates the expected schema."""


class DataError(CorpusForgeError):
    """Input data violates an operation's precondition."""
