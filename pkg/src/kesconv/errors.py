"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit codes (see ``kesconv.cli``).
"""


class KESConvError(Exception):
    """Base class for all package errors."""


class DimensionError(KESConvError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class GraphError(KESConvError, RuntimeError):
    """Misuse of the gradient record (e.g. a second backward on one graph)."""


class LengthError(KESConvError, ValueError):
    """A sequence does not fit into the model's position budget."""


class ConfigError(KESConvError, ValueError):
    """Invalid or unknown configuration values."""


class DataError(KESConvError, ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingEmbeddingError(DataError):
    """An external embedding file has no vector for a requested id."""


class NumericalError(KESConvError, ArithmeticError):
    """A non-finite loss was produced during training."""

    def __init__(self, step, batch_ids):
        super().__init__(f"non-finite loss at step {step}; batch ids: {list(batch_ids)}")
        self.step = step
        self.batch_ids = list(batch_ids)
