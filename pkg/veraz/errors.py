"""Exception hierarchy for Veraz."""

from typing import Optional


class VerazError(Exception):
    """Base class for every error raised by Veraz."""
    pass


class DimensionError(VerazError, ValueError):
    """Operand shapes do not agree."""
    pass


class ConfigError(VerazError, ValueError):
    """A configuration value is outside its documented range."""
    pass


class ContractError(VerazError):
    """A precondition of an operation was violated."""
    pass


class LeakageError(ContractError):
    """Validation or test information reached training."""
    pass


class CorpusError(VerazError):
    """The input corpus could not be loaded."""

    def __init__(
        self,
        message: str,
        line_number: Optional[int] = None,
        record_id: Optional[str] = None
    ):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
        self.record_id = record_id


class SentimentLookupError(VerazError, KeyError):
    """No precomputed sentiment scores exist for a record."""

    def __init__(self, record_id: str):
        super().__init__(f"No precomputed sentiment scores for record {record_id!r}")
        self.record_id = record_id

    def __str__(self) -> str:
        # KeyError would repr() the message
        return str(self.args[0])
