"""Exception hierarchy. Every failure the engine can signal derives from GradeshiError."""


class GradeshiError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GradeshiError):
    """Tensor extents do not fit the requested operation."""


class ParameterError(GradeshiError):
    """An operation argument is outside its legal range."""


class ConfigError(GradeshiError):
    """An architecture or run configuration is inconsistent."""


class StateError(GradeshiError):
    """An operation was invoked before the state it depends on exists."""


class NumericError(GradeshiError):
    """A non-finite value reached a place that requires finite numbers."""


class DataError(GradeshiError):
    """Dataset ingestion, labeling, splitting or filtering failed."""


class ImageError(DataError):
    """An image file could not be decoded."""


class CheckpointFormatError(GradeshiError):
    """A checkpoint file has a bad magic or an unsupported version."""


class CheckpointIntegrityError(GradeshiError):
    """A checkpoint file is truncated or internally inconsistent."""


class TransferError(GradeshiError):
    """Pretrained trunk parameters do not fit the target network."""


class EvaluationError(GradeshiError):
    """A model and an evaluation listing are incompatible."""
