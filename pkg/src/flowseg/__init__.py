"""Temporal tooling for video semantic segmentation artifacts.

Optical-flow label propagation, pseudo-label refinement, consistent
class-mix, confusion-matrix and temporal-consistency metrics, forward
evaluations of the adaptation objectives, a manifest-driven batch
pipeline, and a synthetic video-shift generator used as the correctness
oracle for all of it.
"""

from .core import (
    IGNORE_VALUE,
    ClassSpace,
    FlowField,
    LabelMap,
    LogitVolume,
    ScalarPlane,
    ValidityMask,
    apply_mask,
    make_label_map,
)
from .warp import WarpResult, propagate_labels, propagate_logits, propagate_plane

__version__ = "0.1.0"

__all__ = [
    "IGNORE_VALUE",
    "ClassSpace",
    "FlowField",
    "LabelMap",
    "LogitVolume",
    "ScalarPlane",
    "ValidityMask",
    "WarpResult",
    "apply_mask",
    "make_label_map",
    "propagate_labels",
    "propagate_logits",
    "propagate_plane",
    "__version__",
]
