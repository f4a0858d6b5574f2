"""Exception types shared across the package."""


class MassrankError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(MassrankError):
    """An input value violates a documented precondition."""


class DimensionError(InvalidInputError):
    """Vector operands disagree in dimension."""


class DegenerateVectorError(InvalidInputError):
    """A vector has zero Euclidean norm where a direction is required."""


class EmptySequenceError(InvalidInputError):
    """A token sequence is empty where at least one token is required."""


class AlignmentError(InvalidInputError):
    """Paired per-token sequences differ in length."""


class EmptySampleError(InvalidInputError):
    """A Monte-Carlo estimator received no samples."""


class WeightError(InvalidInputError):
    """Sample weights are invalid: wrong count, nonpositive, or not normalized."""


class MissingEntryError(MassrankError):
    """A required (image, text) or (query, candidate) entry is absent."""


class ModelDomainError(MassrankError):
    """A toy-model query references an unknown image or token, or a sequence
    outside the model's support."""


class ConstructionError(MassrankError):
    """A synthetic model family cannot be built for the requested parameters."""


class EmptyDatasetError(MassrankError):
    """A metric was asked to aggregate over zero samples."""


class TableFormatError(MassrankError):
    """A table, manifest, or score file violates the documented format.

    Messages name the offending line when the problem is tied to one.
    """


class AdapterError(MassrankError):
    """Base class for adapter transport failures."""


class AdapterProtocolError(AdapterError):
    """The adapter response violates the wire protocol."""


class AdapterTimeoutError(AdapterError):
    """The adapter failed to answer within the configured deadline."""
