"""Exception hierarchy shared across the pipeline."""


class EnselError(Exception):
    """Base class for all library errors."""


class ShapeError(EnselError):
    """Tensor or image dimensions do not match what an operation requires."""


class InvalidArgument(EnselError):
    """A caller-supplied value is outside its documented domain."""


class NumericError(EnselError):
    """A computation received or produced non-finite values."""


class StateError(EnselError):
    """An operation was invoked against stale or mismatched cached state."""


class DecodeError(EnselError):
    """An image byte stream could not be decoded.

    `offset` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte {offset})")
        self.offset = offset


class AlignmentError(EnselError):
    """Class distributions could not be brought onto a common label set."""


class DegenerateDistributionError(EnselError):
    """A distribution has zero mass on the labels that survive alignment."""


class TrainingError(EnselError):
    """Training diverged or could not proceed; `epoch` is 1-based."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class ModelLoadError(EnselError):
    """Base class for model deserialization failures."""


class InvalidMagicError(ModelLoadError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(ModelLoadError):
    """File format version is not supported by this build."""


class TruncatedFileError(ModelLoadError):
    """File ended before the declared payload was complete."""


class ChecksumError(ModelLoadError):
    """Weight bytes do not match the trailing CRC32."""


class ArchitectureMismatchError(ModelLoadError):
    """Declared tensors do not fit the named architecture."""


class RegistryError(EnselError):
    """Model registry manifest is inconsistent (duplicate id, missing file, bad role)."""


class PipelineError(EnselError):
    """A diagnosis stage failed; `stage` names the failing stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
