"""Exception types shared across the package."""


class CCMTError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CCMTError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ValidationError(CCMTError):
    """A config, argument, or data record violates its contract."""


class DivergenceError(CCMTError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DataFormatError(CCMTError):
    """A dataset file is malformed. Carries the byte offset of the failure."""

    def __init__(self, message, offset=None, record_index=None):
        super().__init__(message)
        self.offset = offset
        self.record_index = record_index


class ModelFormatError(CCMTError):
    """A model file is malformed, truncated, or fails its checksum."""


class FiniteDifferenceError(CCMTError):
    """The probed function returned a non-finite value during differencing."""
