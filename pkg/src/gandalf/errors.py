"""Exception hierarchy shared across the package."""


class GandalfError(Exception):
    """Base class for every error raised by this package."""


class FormatError(GandalfError):
    pass


class CorruptVolume(GandalfError):
    pass


class InvalidTaskLabel(GandalfError):
    pass


class InvalidStage(GandalfError):
    pass


class DatasetWriteError(GandalfError):
    pass


class ArchitectureError(GandalfError):
    pass


class ShapeError(GandalfError):
    pass


class NumericError(GandalfError):
    pass


class LabelError(GandalfError):
    pass


class CheckpointError(GandalfError):
    pass


class AbortRun(GandalfError):
    """Training hit a non-finite epoch loss after the rollback budget ran out."""


class EmptyEvaluation(GandalfError):
    pass


class ConfigError(GandalfError):
    pass
