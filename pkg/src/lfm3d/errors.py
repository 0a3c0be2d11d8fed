"""Exception hierarchy shared across the package."""


class LFM3DError(Exception):
    """Base class for all package errors."""


# geometry
class PointBehindCamera(LFM3DError):
    pass


class NonpositiveDepth(LFM3DError):
    pass


class NonRotationInput(LFM3DError):
    pass


class InsufficientCorrespondences(LFM3DError):
    pass


class DegenerateConfiguration(LFM3DError):
    pass


class CheiralityAmbiguity(LFM3DError):
    pass


# scene generation
class InvalidConfig(LFM3DError):
    pass


class InvalidRange(LFM3DError):
    pass


class ObjectNotVisible(LFM3DError):
    pass


class MissingDepth(LFM3DError):
    pass


# encoding / matcher
class OutOfBounds(LFM3DError):
    pass


class ShapeMismatch(LFM3DError):
    pass


class NonFiniteScores(LFM3DError):
    pass


class EmptySupervision(LFM3DError):
    pass


class MissingCheckpoint(LFM3DError):
    pass


class NonFiniteLoss(LFM3DError):
    pass


class NonFiniteGradient(LFM3DError):
    pass


# baselines / evaluation
class EmptyInput(LFM3DError):
    pass


class IndexOutOfRange(LFM3DError):
    pass


class EmptyDataset(LFM3DError):
    pass


class InsufficientKeypoints(LFM3DError):
    pass


# cli
class InvalidFlags(LFM3DError):
    pass
