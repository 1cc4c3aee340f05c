"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class PoiNotFoundError(LookupError):
    """The requested semantic class matched nothing (no views or no splats)."""


class FormatError(ValueError):
    """A file on disk does not match its expected format."""


class TrainingCollapsedError(RuntimeError):
    """Refinement pruned the scene down to zero splats.

    The partial training log is attached as ``log``.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
