from typing import List, Optional, Text


class DiVAEException(Exception):
    """Basic exception for errors raised by divae."""

    def __init__(self, message: Text) -> None:
        super(DiVAEException, self).__init__(message)
        self.message = message

    def __str__(self) -> Text:
        return self.message


class InvalidConfigException(DiVAEException, ValueError):
    """Raised if a configuration value or combination is not supported."""


class ShapeMismatchError(DiVAEException, ValueError):
    """Raised if tensors do not have the shapes an operation expects."""


class TimestepRangeError(DiVAEException, IndexError):
    """Raised if a diffusion timestep lies outside of `[1, T]`."""


class CodeIndexError(DiVAEException, IndexError):
    """Raised if a codebook index or token lies outside of `[0, K)`."""


class ValidationError(DiVAEException, ValueError):
    """Raised if input values violate the documented value range."""


class NumericError(DiVAEException, ArithmeticError):
    """Raised for non-finite values, e.g. a NaN training loss."""


class DataIngestionError(DiVAEException):
    """Raised if an image folder can not be turned into a dataset.

    Attributes:
        offending_files -- files which could not be decoded
    """

    def __init__(self, message: Text,
                 offending_files: Optional[List[Text]] = None) -> None:
        super(DataIngestionError, self).__init__(message)
        self.offending_files = offending_files or []


class CheckpointError(DiVAEException):
    """Raised if a checkpoint can not be written or loaded."""


class CheckpointLockedError(CheckpointError):
    """Raised if another process already writes to a checkpoint directory.
    """


class InvalidArgumentsError(DiVAEException, ValueError):
    """Raised if the command line can not be parsed."""
