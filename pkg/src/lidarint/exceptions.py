"""Error taxonomy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
TrainingFault -> 4. Anything else is a bug and propagates normally.
"""


class LidarIntError(Exception):
    """Base class for all package errors."""


class ConfigError(LidarIntError):
    """Invalid configuration value or combination (exit code 2)."""


class DataError(LidarIntError):
    """Problem with input data: files, shapes, missing modalities (exit code 3)."""


class MalformedFileError(DataError):
    """On-disk record layout violated (e.g. truncated binary point cloud)."""


class LabelMismatchError(DataError):
    """Label record count does not match the point count."""


class EmptyCloudError(DataError):
    """Operation requires a non-empty point cloud."""


class InsufficientPointsError(DataError):
    """Cloud too small for the requested neighborhood size."""


class ModalityUnavailableError(DataError):
    """Requested input channel is not present on this data."""


class GridMismatchError(DataError):
    """Spherical images do not share the same grid geometry."""


class TrainingFault(LidarIntError):
    """Non-finite loss or similar runtime fault during training (exit code 4).

    ``dump_path`` points at a diagnostic state dump when one was written.
    """

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
