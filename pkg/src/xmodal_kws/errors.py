"""Error types shared across the package.

The CLI maps these onto exit codes: validation-style errors exit 1,
file/format errors exit 2.
"""


class InvalidArgumentError(ValueError):
    """An argument value is outside the operation's domain."""


class ShapeError(InvalidArgumentError):
    """An array argument has the wrong shape or width."""


class ValidationError(ValueError):
    """Well-formed input that violates a semantic constraint."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared format."""


class WaveTooShortError(InvalidArgumentError):
    """A waveform is shorter than one analysis window."""


class MissingFeatureError(KeyError):
    """A referenced audio id or keyword has no stored features."""


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss."""

    def __init__(self, message, epoch, batch_index, recent_losses):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.recent_losses = list(recent_losses)
