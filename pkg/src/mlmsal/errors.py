"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit 1, data and
I/O problems exit 2, numerical divergence exits 3.
"""


class MlmsalError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(MlmsalError, ValueError):
    exit_code = 1


class ShapeError(MlmsalError, ValueError):
    exit_code = 1


class ValidationError(MlmsalError, ValueError):
    exit_code = 2


class LoadError(MlmsalError):
    """Weights file or checkpoint cannot be used."""

    exit_code = 2


class IngestionError(MlmsalError):
    """Dataset directory is inconsistent (e.g. an image without a target)."""

    exit_code = 2


class StorageError(MlmsalError, OSError):
    exit_code = 2


class TrainingDivergenceError(MlmsalError, FloatingPointError):
    """Raised when a training step produces a non-finite loss."""

    exit_code = 3

    def __init__(self, step, breakdown=None):
        self.step = step
        self.breakdown = breakdown
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
