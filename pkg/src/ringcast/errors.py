"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration/structural
problems exit 2, data problems exit 3, numerical failures exit 4.
"""


class RingcastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(RingcastError):
    """Invalid configuration value (bad resolution, zero std, mismatched flags)."""

    exit_code = 2


class StructuralError(RingcastError):
    """Shape or layout inconsistency between tensors and their metadata."""

    exit_code = 2


class DataError(RingcastError):
    """Problems with stored or requested data."""

    exit_code = 3


class DataAvailabilityError(DataError):
    """A requested sample lacks required follow-on days."""


class CorruptFileError(DataError):
    """Tensor file header or payload cannot be decoded."""


class ShapeMismatchError(DataError):
    """Tensor file shape disagrees with the manifest."""


class NonFiniteDataError(DataError):
    """Tensor payload contains NaN or Inf."""


class DegenerateInputError(DataError):
    """Metric input is degenerate (zero-norm anomaly, empty slice, empty sequence)."""


class NumericalError(RingcastError):
    """Non-finite values produced during computation."""

    exit_code = 4

    def __init__(self, message, stage=None, step=None):
        super().__init__(message)
        self.stage = stage
        self.step = step


class TrainingFailureError(NumericalError):
    """Training loss became non-finite at a known step."""


class RolloutFailureError(NumericalError):
    """Autoregressive rollout produced a non-finite state."""
