class DomainError(ValueError):
    """Input outside an operation's domain (bad bounds, wrong dimension, ...)."""


class TrainingFailed(RuntimeError):
    """A model fit diverged or produced a non-finite loss."""


class TunerAbort(RuntimeError):
    pass
