"""Exception hierarchy shared by every stage of the retrieval engine."""

from __future__ import annotations


class IFSRError(Exception):
    """Base class. ``stage`` is filled in by the pipeline for diagnostics."""

    stage: str | None = None

    def __init__(self, message: str = "", stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


# dataset-io
class MeshFormatError(IFSRError):
    pass


class MissingHeader(MeshFormatError):
    pass


class CountMismatch(MeshFormatError):
    pass


class IndexOutOfRange(MeshFormatError):
    pass


class LabelFormatError(IFSRError):
    pass


class BadHeader(LabelFormatError):
    pass


class DeclaredCountMismatch(LabelFormatError):
    pass


class CacheError(IFSRError):
    pass


class VersionMismatch(CacheError):
    pass


class DimensionHeaderMismatch(CacheError):
    pass


class IncompleteRecord(CacheError):
    pass


# geometry / features
class DegenerateMesh(IFSRError):
    pass


class ResolutionTooSmall(IFSRError):
    pass


class OddResolution(IFSRError):
    pass


class DimensionMismatch(IFSRError):
    pass


class InsufficientDescriptors(IFSRError):
    pass


# clustering / relevance
class InvalidClusterCount(IFSRError):
    pass


class EmptyTrainingSet(IFSRError):
    pass


# evaluation
class IncompleteRanking(IFSRError):
    pass


class UnlabeledShape(IFSRError):
    pass


# pipeline
class MissingFeatures(IFSRError):
    pass


class ModelMissing(IFSRError):
    pass


class ConfigError(IFSRError):
    pass
