"""Typed errors raised across the package."""


class SfrError(Exception):
    """Base class for all sound-field reconstruction errors."""


class InvalidArgumentError(SfrError, ValueError):
    """An argument is outside its valid range."""


class ShapeMismatchError(SfrError, ValueError):
    """Array or grid shapes are incompatible."""


class MaskMismatchError(ShapeMismatchError):
    """A sampling mask does not match the grid it is applied to."""


class IncompatibleSignalError(SfrError, ValueError):
    """Signals cannot be combined (e.g. different sample rates)."""


class DegenerateReferenceError(SfrError, ValueError):
    """A reference channel has zero energy, so a normalized error is undefined."""


class GeometryError(SfrError, ValueError):
    """Source or microphone positions are invalid for the room."""


class IncompatibleAdapterError(SfrError, ValueError):
    """An adapter bundle was built for a different base network."""


class UnknownLayerError(SfrError, ValueError):
    """A layer name does not resolve to an adaptable convolution."""


class TrainingDivergedError(SfrError, RuntimeError):
    """The training loss became NaN or infinite."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Training diverged at iteration {iteration} (loss={loss})")


class FileFormatError(SfrError, ValueError):
    """Base class for malformed grid, adapter or checkpoint files."""


class VersionMismatchError(FileFormatError):
    """The file was written with an unsupported format version."""


class TruncatedPayloadError(FileFormatError):
    """The payload holds fewer bytes than the header announces."""

    def __init__(self, expected: int, actual: int, path: object = None):
        self.expected = expected
        self.actual = actual
        where = f" in {path}" if path is not None else ""
        super().__init__(
            f"Truncated payload{where}: expected {expected} bytes, got {actual}"
        )


class CorruptFileError(FileFormatError):
    """The header or the payload layout is inconsistent."""


class NonFiniteDataError(FileFormatError):
    """The payload contains NaN or infinite values."""


class MissingFingerprintError(FileFormatError):
    """An adapter file does not name the base model it belongs to."""


class ReportError(SfrError):
    """Run outputs could not be aggregated."""

    def __init__(self, message: str, files: list[str] | None = None):
        self.files = files or []
        if self.files:
            message = f"{message}: {', '.join(self.files)}"
        super().__init__(message)
