"""Exception hierarchy shared across the toolkit.

The CLI maps these onto its documented exit codes, so new failure modes
should subclass the closest existing category rather than raising bare
exceptions.
"""


class TerrainError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormatError(TerrainError):
    """Raster or container format we do not read."""


class DataValidationError(TerrainError):
    """Input data violates a documented precondition."""


class CheckpointError(TerrainError):
    """Checkpoint container is corrupt or unreadable."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint config does not match what the caller expected."""


class TrainingDivergedError(TerrainError):
    """A training loss became non-finite; the run was aborted."""
