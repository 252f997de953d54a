"""Exception types shared by all ties modules."""


class TiesError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TiesError):
    """Tensor shapes do not conform for the requested operation."""


class ConfigError(TiesError):
    """Invalid hyperparameter or configuration value."""


class ContractViolation(TiesError):
    """An operation was called on input that violates its contract."""


class VocabularyError(TiesError):
    """An action string is not present in the action vocabulary."""


class DataError(TiesError):
    """Inconsistent or invalid data (labels, timestamps, ...)."""


class ParseError(TiesError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class MetricError(TiesError):
    """A metric is undefined on the given inputs (e.g. single-class PR-AUC)."""


class UnknownIdError(TiesError, KeyError):
    """An id is missing from an embedding table."""

    def __str__(self) -> str:  # KeyError quotes its payload; keep the message readable
        return self.args[0] if self.args else ""


class CheckpointError(TiesError):
    """A model checkpoint could not be read."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version does not match this implementation."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint payload is truncated or corrupted (checksum mismatch)."""


class EncoderKindError(ConfigError):
    """Checkpoint encoder kind differs from the requested one."""
