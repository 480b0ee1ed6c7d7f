"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: ConfigError -> 2, data errors -> 3,
numeric failures -> 4.
"""


class IvfuseError(Exception):
    """Base class for all package errors."""


class ConfigError(IvfuseError):
    """Invalid configuration file, option, or value."""


class DataError(IvfuseError):
    """Base class for input-data problems."""


class DecodeError(DataError):
    """Image file could not be read or decoded."""


class DimensionMismatch(DataError):
    """Paired arrays do not share the same height/width."""


class ImageTooSmall(DataError):
    """Source image smaller than the requested patch size."""


class InsufficientPairs(DataError):
    """Fewer image pairs available than requested."""


class NonBinaryMask(DataError):
    """Saliency mask contains values other than 0 and 1."""


class EmptyDataset(DataError):
    """Training or evaluation was given no data."""


class EmptyReport(DataError):
    """Plot/aggregation requested on an empty report set."""


class CheckpointVersionMismatch(DataError):
    """Checkpoint magic string or version does not match this build."""


class ShapeError(DataError):
    """Tensor shape violates an operation's contract."""


class OutOfRange(IvfuseError):
    """Scalar argument outside its documented domain."""


class NumericError(IvfuseError):
    """Base class for numeric failures during optimization."""


class NonFiniteLoss(NumericError):
    """Loss became NaN/Inf during training; message records the step."""


class DegenerateImage(UserWarning):
    """Warning: image is constant, threshold method degenerates."""
