"""
Error hierarchy shared by every package.
Each error carries the exit code the command line reports for it.
"""


class PortraitError(Exception):
    exit_code = 1


class ValidationError(PortraitError):
    """Bad shapes, ranges, counts or config keys."""
    exit_code = 1


class ConfigurationError(ValidationError):
    """A required artifact (codec, embedder, checkpoint) is missing or unusable."""
    exit_code = 1


class IntegrityError(PortraitError):
    """On-disk state does not match its manifest."""
    exit_code = 2


class NumericalAbort(PortraitError):
    """Training produced a non-finite loss."""
    exit_code = 3

    def __init__(self, message: str, step: int = None, last_good: str = None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good
