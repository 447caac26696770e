"""Exception types shared across the package."""


class XmemError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(XmemError):
    """Shapes of two operands are incompatible."""


class NonFiniteError(XmemError):
    """A NaN or Inf reached a layer boundary."""


class DegenerateBatchError(XmemError):
    """A batch cannot support the requested loss (e.g. no valid triplet)."""


class DeterminismError(XmemError):
    """A loss function returned different values for identical inputs."""


class PrecisionError(XmemError):
    """An operation requires 64-bit mode but received 32-bit data."""


class ConfigError(XmemError):
    """Invalid configuration key or value."""


class DatasetFormatError(XmemError):
    """A dataset file violates the expected schema."""


class CheckpointFormatError(XmemError):
    """A checkpoint file is corrupt or does not match the model."""
