"""Exception hierarchy shared by every module."""


class PoseGeomError(Exception):
    """Base class for all toolkit errors."""


class DegenerateInput(PoseGeomError, ValueError):
    pass


class DegenerateGeometry(PoseGeomError, ValueError):
    pass


class InsufficientPoints(PoseGeomError, ValueError):
    pass


class NoConvergence(PoseGeomError, RuntimeError):
    pass


class DimensionMismatch(PoseGeomError, ValueError):
    pass


class BehindCamera(PoseGeomError, ValueError):
    pass


class NonPositiveSize(PoseGeomError, ValueError):
    pass


class NonPositiveScale(PoseGeomError, ValueError):
    pass


class NonPositiveSigma(PoseGeomError, ValueError):
    pass


class ZeroNormRow(PoseGeomError, ValueError):
    pass


class EmptySet(PoseGeomError, ValueError):
    pass


class EmptyInput(PoseGeomError, ValueError):
    pass


class TooFewKeypoints(PoseGeomError, ValueError):
    pass


class NoValidAnchors(PoseGeomError, ValueError):
    pass


class NotNormalized(PoseGeomError, ValueError):
    pass


class LengthMismatch(PoseGeomError, ValueError):
    pass


class NothingVisible(PoseGeomError, ValueError):
    pass


class InvalidConfig(PoseGeomError, ValueError):
    pass


class SchemaError(PoseGeomError, ValueError):
    pass


class MissingModel(PoseGeomError, FileNotFoundError):
    pass
