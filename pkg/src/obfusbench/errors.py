"""Exception hierarchy shared by every obfusbench module."""


class ObfusbenchError(Exception):
    """Base class for all package errors."""


class InvalidSpace(ObfusbenchError, ValueError):
    pass


class InvalidPoint(ObfusbenchError, ValueError):
    pass


class InvalidVector(ObfusbenchError, ValueError):
    pass


class InvalidArchitecture(ObfusbenchError, ValueError):
    pass


class InvalidCache(ObfusbenchError, ValueError):
    pass


class ShapeMismatch(ObfusbenchError, ValueError):
    pass


class DimensionTooSmall(ObfusbenchError, ValueError):
    pass


class TrainingDiverged(ObfusbenchError, RuntimeError):
    pass


class InvalidLatent(ObfusbenchError, ValueError):
    pass


class FormatError(ObfusbenchError, ValueError):
    """A persisted document could not be parsed."""


class ModelFormatError(FormatError):
    pass


class TrajectoryFormatError(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class EpisodeFinished(ObfusbenchError, RuntimeError):
    pass


class SpaceMismatch(ObfusbenchError, ValueError):
    pass


class BudgetExhausted(ObfusbenchError, RuntimeError):
    pass


class TooFewPoints(ObfusbenchError, ValueError):
    pass


class EmptyDataset(ObfusbenchError, ValueError):
    pass


class UnknownMilestone(ObfusbenchError, KeyError):
    pass


class DuplicateSeeds(ObfusbenchError, ValueError):
    pass


class IncomparableReports(ObfusbenchError, ValueError):
    pass
