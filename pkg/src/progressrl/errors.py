"""Exception types shared across the package, mapped to CLI exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class ProgressRlError(Exception):
    """Base class for package errors."""


class ConfigError(ProgressRlError):
    """Bad configuration: shapes, option values, unknown config keys."""


class NumericalError(ProgressRlError):
    """A non-finite value appeared where the math requires finite ones."""


class EpisodeExhaustedError(ProgressRlError):
    """env_step called on a state whose step counter is already at the horizon."""


class DemoGenerationError(ProgressRlError):
    """The requested success/failure mix could not be assembled."""


class CheckpointError(ProgressRlError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by a newer (or unknown) format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file is shorter than its header promises."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its recorded digest."""
