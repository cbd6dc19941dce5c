"""Exception hierarchy."""


class HurdleError(Exception):
    """Base class for all package errors."""


class DomainError(HurdleError, ValueError):
    """An argument lies outside the domain of a density or loss."""


class NumericalError(HurdleError, ArithmeticError):
    """A normalizing integral underflowed or was not finite."""


class UnfittedError(HurdleError, RuntimeError):
    """A weight scheme was used before its frequency table was fitted."""


class StaleActivationError(HurdleError, RuntimeError):
    """Backward pass requested without a matching forward pass."""


class DivergenceError(HurdleError, FloatingPointError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite training loss {value!r} at epoch {epoch}, batch {batch}")


class CheckpointError(HurdleError, OSError):
    """Checkpoint or dataset file is corrupt or truncated."""


class VersionMismatchError(CheckpointError):
    """File was written by an incompatible format version."""


class ConfigError(HurdleError, ValueError):
    """Invalid experiment configuration."""


class SplitMismatchError(HurdleError, ValueError):
    """Compared runs were evaluated on different test splits."""
