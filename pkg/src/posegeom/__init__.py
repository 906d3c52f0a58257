"""Geometry toolkit for category-level object pose: alignment, metrics, losses and synthetic scenes."""

__version__ = "0.1.0"

from .errors import PoseGeomError  # noqa: E402
from .transforms import AnisoSimilarity, RigidTransform, Similarity  # noqa: E402

__all__ = ["__version__", "PoseGeomError", "AnisoSimilarity", "RigidTransform", "Similarity"]
