"""Exception types shared across the package.

ValidationError marks bad inputs (precondition violations, malformed files,
out-of-range parameters). FitDivergedError marks a training run that blew up
even after the learning-rate guard exhausted its retries. The CLI maps the
former to exit code 1 and everything else to exit code 2.
"""


class ValidationError(ValueError):
    """Input failed a precondition check."""


class FitDivergedError(RuntimeError):
    """Training loss became non-finite and the step-size guard gave up."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
