"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, checkpoint problems exit 3, runtime aborts exit 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown keys, out-of-range values, bad shapes."""


class DegenerateGatingError(RuntimeError):
    """All gating weights collapsed below the floor; composition is undefined."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load/save failures."""


class CorruptCheckpointError(CheckpointError):
    """Blob hash does not match the manifest."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointPhaseError(CheckpointError):
    """Checkpoint phase does not match what the pipeline expects."""


class TrainingAborted(RuntimeError):
    """Non-finite losses or metrics; carries a diagnostics dump path."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
