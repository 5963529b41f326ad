"""Exception types shared across the package.

The CLI maps SchemaError to exit code 2 and NumericalError (and subclasses)
to exit code 3.
"""


class SchemaError(ValueError):
    """Invalid input data: malformed files, broken invariants, bad labels."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, fold, divergence)."""


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance.

    Carries the best residual seen so the caller can report it.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StageError(NumericalError):
    """Wraps a failure inside a pipeline stage with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
