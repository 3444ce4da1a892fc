"""Exception types shared across the toolkit."""


class BlockwatchError(Exception):
    """Base class for all toolkit errors."""


# --- trace codecs ---------------------------------------------------------

class BadMagic(BlockwatchError):
    """Byte stream does not start with the BWT1 magic."""


class TruncatedRecord(BlockwatchError):
    """Byte stream ends mid-header or mid-record, or carries trailing bytes."""


class InvariantViolation(BlockwatchError):
    """An event violates a trace invariant.

    `index` is the offending record index within the event stream.
    """

    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"event {index}: {reason}")


class ParseError(BlockwatchError):
    """A CSV line could not be parsed. 1-based line, 0-based column index."""

    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


# --- entropy --------------------------------------------------------------

class EmptyBuffer(BlockwatchError):
    """Entropy requested for an empty byte buffer / empty histogram."""


# --- feature extraction ---------------------------------------------------

class OutOfOrderEvent(BlockwatchError):
    """Event pushed with a timestamp below the previous one."""


# --- model ----------------------------------------------------------------

class EmptyInput(BlockwatchError):
    """Training set has fewer than two rows."""


class SingleClassInput(BlockwatchError):
    """Training labels contain only one class."""


class DimensionMismatch(BlockwatchError):
    """Input vector length differs from the model's feature count."""


class SchemaError(BlockwatchError):
    """Model/report JSON does not match the expected schema.

    `path` is a JSON-pointer-ish location of the offending element.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ModelMismatch(BlockwatchError):
    """Model feature dimension incompatible with the detection stream."""


# --- synthesis ------------------------------------------------------------

class InsufficientSpace(BlockwatchError):
    """Volume cannot hold the requested allocation."""


class ConfigError(BlockwatchError):
    """Scenario or experiment configuration is invalid."""


# --- evaluation -----------------------------------------------------------

class LengthMismatch(BlockwatchError):
    """y_true and y_pred have different lengths."""


class ClassTooSmall(BlockwatchError):
    """A stratum has fewer rows than the number of folds."""


class OverlapError(BlockwatchError):
    """A scenario tag appears in both train and test selectors."""


class EmptySelector(BlockwatchError):
    """A train/test selector matched no rows."""
