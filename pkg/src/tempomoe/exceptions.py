"""Exception hierarchy shared by every tempomoe module."""


class TempoMoEError(Exception):
    """Base class for all package errors."""


class ValidationError(TempoMoEError, ValueError):
    """Input violates a documented contract (shape, range, layout)."""


class FormatError(ValidationError):
    """A TMOE container, sidecar, manifest or checkpoint is malformed."""


class NonDeterministicError(TempoMoEError, RuntimeError):
    """A function expected to be deterministic returned different values."""


class TrainingDiverged(TempoMoEError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
