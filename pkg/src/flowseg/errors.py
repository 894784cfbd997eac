"""Exception hierarchy shared across the package.

Every contract violation raises a typed subclass of FlowsegError so callers
can distinguish bad inputs from bad files from bad parameters.
"""


class FlowsegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowsegError):
    """Raster dimensions or class spaces do not match."""


class InvalidLabelError(FlowsegError):
    """A label value is outside 0..K-1 and is not the ignore sentinel."""


class DataError(FlowsegError):
    """Values violate a range or finiteness contract (NaN, inf, bad range)."""


class FormatError(FlowsegError):
    """A byte stream does not match the expected file format."""


class UnsupportedFormatError(FormatError):
    """A recognized but unsupported variant of a file format."""


class LengthError(FormatError):
    """A file payload is truncated or carries trailing bytes."""


class ManifestError(FlowsegError):
    """A dataset manifest violates its schema."""


class ManifestParseError(ManifestError):
    """A manifest line is not valid JSON or fails field validation."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicateRecordError(ManifestError):
    """Two manifest records share the same (clip_id, frame_index)."""


class MissingInputError(FlowsegError):
    """An operation was invoked without a required input."""


class EmptySourceError(FlowsegError):
    """A source label map carries no usable (non-ignore) pixels."""


class ParameterError(FlowsegError):
    """A scalar parameter is outside its legal range."""


class UndefinedLossError(FlowsegError):
    """A loss has an empty support (for example, all pixels ignored)."""


class JobFailureError(FlowsegError):
    """A batch job exceeded its failure budget."""
