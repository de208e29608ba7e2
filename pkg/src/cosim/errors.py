"""Exception types shared across the toolkit."""


class CosimError(Exception):
    """Base class for all toolkit errors."""


class FormatError(CosimError):
    """A serialized artifact violates its declared byte or line layout."""


class DimMismatch(FormatError):
    """Declared dimensions or counts disagree with the actual payload."""


class DuplicateId(FormatError):
    """The same image id occurs more than once where ids must be unique."""


class NonFiniteValue(FormatError):
    """A NaN or infinity appeared where only finite numbers are allowed."""


class MissingId(CosimError):
    """A triple references an image id absent from the embedding table."""


class EmptyInput(CosimError):
    """An operation that needs at least one element received none."""


class TrainCountOutOfRange(CosimError):
    """A requested split size does not leave both parts non-empty."""


class ZeroVector(CosimError):
    """Cosine distance is undefined for a zero-norm vector."""


class ShapeMismatch(CosimError):
    """Operands have incompatible shapes or lengths."""


class BadConfig(CosimError):
    """A configuration value violates its contract."""


class NonFiniteGradient(CosimError):
    """A gradient or loss became NaN or infinite during training."""


class NegativeScore(CosimError):
    """Weight normalization requires non-negative scores."""
