"""Exception types shared across the engine.

Every domain failure raises a subclass of :class:`XmodalError` so the CLI can
map them to exit code 1 with a message naming the error type.
"""


class XmodalError(Exception):
    """Base class for all domain errors."""


class MalformedHeader(XmodalError):
    """Bundle or checkpoint file does not match the expected binary layout."""


class DimensionMismatch(XmodalError):
    """Related containers disagree on a dimension or count."""


class NonFiniteValue(XmodalError):
    """A NaN or Inf was found in data that must be finite."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ZeroVector(XmodalError):
    """A row with near-zero norm cannot be normalized."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ShapeMismatch(XmodalError):
    """Operands have incompatible shapes."""


class NonPositiveTemperature(XmodalError):
    """Softmax temperature must be strictly positive."""


class MissingSlot(XmodalError):
    """A prompt template slot has no value in the label record."""

    def __init__(self, name: str):
        super().__init__(f"missing slot: {name!r}")
        self.name = name


class EmptyRecordSet(XmodalError):
    """Prompt building requires at least one label record."""


class SampleTooLarge(XmodalError):
    """Requested subset size exceeds the population."""


class BatchTooSmall(XmodalError):
    """Contrastive pretraining needs at least two samples per batch."""


class NonFiniteLoss(XmodalError):
    """Training produced a non-finite loss; the run is aborted."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class MissingLabels(XmodalError):
    """Accuracy was requested but no labels are available."""


class SingleClass(XmodalError):
    """Linear probing needs at least two distinct classes."""


class KTooLarge(XmodalError):
    """Retrieval depth exceeds the gallery size."""


class DimensionTooSmall(UserWarning):
    """More anchors than dimensions: exact orthogonality is impossible."""
