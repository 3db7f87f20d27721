"""
Exception hierarchy for the toolkit.
Every error carries the process exit code the CLI reports for it.
"""


class SpeakerUapError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(SpeakerUapError):
    """Invalid, missing or unknown configuration keys."""

    exit_code = 2


class DataError(SpeakerUapError):
    """Malformed or inconsistent input data and artifacts."""

    exit_code = 3


class NumericError(SpeakerUapError):
    """NaN losses, divergence and other numerical failures."""

    exit_code = 4


class WavDecodeError(DataError):
    """WAV file that is not 16-bit PCM mono at the expected rate."""

    def __init__(self, path: str, field: str, detail: str):
        self.path = path
        self.field = field
        super().__init__(f"{path}: unsupported {field}: {detail}")


class ManifestError(DataError):
    pass


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class InputTooShortError(DataError):
    """Input shorter than the minimum the pipeline can process."""

    def __init__(self, what: str, minimum: int, actual: int):
        self.minimum = minimum
        self.actual = actual
        super().__init__(f"{what} too short: need at least {minimum}, got {actual}")


class ShapeMismatchError(DataError, ValueError):
    pass


class RoomSpecError(DataError, ValueError):
    pass


class EmptyVictimSetError(DataError):
    pass


class SilentReferenceError(DataError, ValueError):
    pass


class TrainingDivergedError(NumericError):
    pass
