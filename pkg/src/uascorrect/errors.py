"""Exception hierarchy shared across the package."""


class CorrectionError(Exception):
    """Base class for all package errors."""


class ShapeError(CorrectionError, ValueError):
    pass


class FormatError(CorrectionError):
    """A file does not match its container format."""


class DataError(CorrectionError, ValueError):
    """Sample values violate an invariant (non-finite, out of domain)."""


class DomainError(DataError):
    pass


class ConfigError(CorrectionError, ValueError):
    pass


class StateError(CorrectionError, RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class CapacityError(CorrectionError, ValueError):
    """Not enough samples or raster area for the request."""


class TrainingError(CorrectionError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class TruncatedFileError(CorrectionError, OSError):
    """A file ended before its declared payload."""
