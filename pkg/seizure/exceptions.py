"""Error hierarchy for the seizure-classification pipeline.

Management commands turn any ``SeizureNetError`` into a ``CommandError`` so the
process exits nonzero; library code raises the specific subclass.
"""


class SeizureNetError(Exception):
    """Base class for every pipeline error."""


class StructuralError(SeizureNetError, ValueError):
    """Shapes or lengths do not agree."""


class NumericError(SeizureNetError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(SeizureNetError):
    """Invalid configuration; ``key_paths`` names the offending keys."""

    def __init__(self, message, key_paths=None):
        super().__init__(message)
        self.key_paths = list(key_paths or [])


class IngestionError(SeizureNetError):
    """A recording cannot be turned into samples."""

    def __init__(self, message, missing=None):
        super().__init__(message)
        self.missing = list(missing or [])


class FormatError(SeizureNetError):
    """On-disk container does not follow the EEGT layout."""


class DatasetError(SeizureNetError):
    """A dataset directory is missing files or holds unreadable ones."""


class TruncationError(FormatError):
    """Payload shorter (or longer) than its header announces."""

    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class SchemaError(SeizureNetError):
    """Class labels or class counts do not match the label schema."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class CheckpointError(SeizureNetError):
    """Checkpoint parameters do not match the target model."""

    def __init__(self, message, param_id=None):
        super().__init__(message)
        self.param_id = param_id


class TrainingError(SeizureNetError):
    """A cross-validation fold failed."""

    def __init__(self, message, fold=None):
        super().__init__(message)
        self.fold = fold
