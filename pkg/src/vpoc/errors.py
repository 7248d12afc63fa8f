"""Exception hierarchy shared by all modules."""


class VpocError(Exception):
    """Base class for package errors."""


class ConfigError(VpocError, ValueError):
    """Invalid configuration value or combination."""


class GeometryError(VpocError, ValueError):
    """Geometric precondition violated (zero-area box, camera inside a berry...)."""


class DegeneratePoseError(GeometryError):
    """Camera pose whose up vector is undefined (zenith)."""


class ShapeError(VpocError, ValueError):
    """Tensor or architecture shape mismatch."""


class StateError(VpocError, RuntimeError):
    """Object used in the wrong state (untrained detector, stale cache...)."""


class LifecycleError(StateError):
    """Environment stepped before reset or after the episode ended."""


class NumericalError(VpocError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class StorageError(VpocError, OSError):
    """Failure reading or writing an artifact on disk."""


class FormatError(VpocError, ValueError):
    """Malformed checkpoint or data file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MissingArtifactError(StorageError):
    """A dataset, parameter file or checkpoint the command needs does not exist."""
