"""Exception hierarchy shared across the pipeline."""


class ReconError(Exception):
    """Base class for all pipeline errors."""


class InputError(ReconError):
    """Bad or unreadable input data."""


class MissingNormals(InputError):
    pass


class MalformedFile(InputError):
    def __init__(self, message: str, offset: int | None = None, kind: str = "line"):
        if offset is not None:
            message = f"{message} (at {kind} {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateExtent(InputError):
    pass


class EmptyCloud(InputError):
    pass


class IoFailure(ReconError):
    pass


class ConfigError(ReconError):
    pass


class DepthOutOfRange(ConfigError):
    pass


class DepthTooShallow(ConfigError):
    pass


class UnsatisfiableCap(ReconError):
    pass


class CoverageGap(ReconError):
    pass


class TooFewNeighbors(ReconError):
    pass


class DegenerateCovariance(ReconError):
    pass


class ShapeMismatch(ReconError):
    pass


class IndexOutOfRange(ReconError):
    pass


class HyperparameterMismatch(ReconError):
    pass


class NonFiniteLoss(ReconError):
    pass


class VersionMismatch(ReconError):
    pass


class CorruptCheckpoint(ReconError):
    pass


class LengthMismatch(ReconError):
    pass


class EmptyInput(ReconError):
    pass


class ZeroArea(ReconError):
    pass


class InvalidMesh(InputError):
    pass
