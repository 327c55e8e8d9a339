"""
Error types shared by every module of the UNO toolkit.
"""


class UnoError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(UnoError, ValueError):
    """Operand shapes do not conform to the operation."""


class DomainError(UnoError, ValueError):
    """A value lies outside the domain of the operation (e.g. log of a non-positive number)."""


class NonFiniteError(UnoError, ValueError):
    """NaN or Inf produced by a forward evaluation."""


class ContractError(UnoError, RuntimeError):
    """A caller broke the contract of an operation (non-scalar loss, missing gradient, ...)."""


class ConfigurationError(UnoError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class LabelRangeError(UnoError, ValueError):
    """A class label lies outside the valid index range."""


class UndefinedCosineError(UnoError, ValueError):
    """Cosine requested for a zero-norm class vector."""


class UndefinedAngleError(UnoError, ValueError):
    """Angle requested against a zero negative-class vector."""


class UndefinedCorrelationError(UnoError, ValueError):
    """Pearson correlation of a constant sequence."""


class DegenerateLabelsError(UnoError, ValueError):
    """Ranking metric requested without both positives and negatives."""


class MissingCheckpointError(UnoError, FileNotFoundError):
    """A required checkpoint directory or file does not exist."""


class TensorFormatError(UnoError, ValueError):
    """Base class for UNOT tensor file and manifest problems."""


class MagicMismatchError(TensorFormatError):
    """File does not start with the UNOT magic bytes."""


class VersionUnsupportedError(TensorFormatError):
    """UNOT version or dtype code is not supported."""


class TruncatedPayloadError(TensorFormatError):
    """Header or payload shorter than announced."""


class ManifestError(TensorFormatError):
    """Manifest JSON is missing, malformed, or inconsistent."""
