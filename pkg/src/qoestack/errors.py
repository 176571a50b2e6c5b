"""Exception hierarchy shared across the package."""


class QoeStackError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QoeStackError):
    """Invalid experiment configuration or CLI usage."""


class SchemaError(QoeStackError):
    """Feature schema mismatch, or a CSV header that does not match the contract."""


class ParseError(QoeStackError):
    """Malformed cell or row in an input file."""


class ValidationError(QoeStackError):
    """A domain invariant was violated (bounds, sizes, degenerate inputs)."""


class TrainingDivergenceError(QoeStackError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, learning_rate: float | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.learning_rate = learning_rate


class IncompatibleModelError(QoeStackError):
    """A model document cannot be transferred to the requesting node."""


class UnsupportedModelError(QoeStackError):
    """The requested analysis is not defined for this model type."""


class UndefinedMetricError(QoeStackError):
    """The metric is mathematically undefined for the given inputs."""


class ProtocolError(QoeStackError):
    """A repetition of the evaluation protocol failed."""
