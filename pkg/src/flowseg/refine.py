"""Pseudo-label refinement strategies.

Every strategy takes the current-frame pseudo-label plus some combination
of a neighboring-frame pseudo-label, per-pixel confidences, forward flow,
and ground truth, and emits an improved pseudo-label where filtered-out
pixels carry the ignore sentinel. Non-ignore output pixels always come
verbatim from one of the inputs.
"""

from __future__ import annotations

import numpy as np

from .core import (
    IGNORE_VALUE,
    FlowField,
    LabelMap,
    ScalarPlane,
    check_same_shape,
)
from .errors import DataError, MissingInputError
from .warp import NEAREST, propagate_labels, propagate_plane


def _require(value, name: str):
    if value is None:
        raise MissingInputError(f"strategy requires {name}")
    return value


def _check_confidence(plane: ScalarPlane, name: str):
    if np.any(plane.data < 0.0) or np.any(plane.data > 1.0):
        raise DataError(f"{name} must lie in [0, 1]")


def refine_consistency(
    pl_t: LabelMap, pl_tpk: LabelMap, flow: FlowField
) -> LabelMap:
    """Keep pixels where the current and flow-warped neighbor labels agree.

    Pixels that disagree, carry ignore in either map, or sample outside
    the frame are set to ignore.
    """
    _require(pl_tpk, "the neighboring-frame pseudo-label")
    _require(flow, "forward flow")
    check_same_shape(pl_t, pl_tpk, flow)
    warped = propagate_labels(pl_tpk, flow)
    keep = (
        warped.validity.data
        & (pl_t.data == warped.payload.data)
        & (pl_t.data != IGNORE_VALUE)
    )
    out = np.where(keep, pl_t.data, np.uint8(IGNORE_VALUE))
    return LabelMap(out, pl_t.class_space)


def refine_max_confidence(
    pl_t: LabelMap,
    conf_t: ScalarPlane,
    pl_tpk: LabelMap,
    conf_tpk: ScalarPlane,
    flow: FlowField,
) -> LabelMap:
    """Per pixel, keep whichever prediction carries the higher confidence.

    The current frame wins ties, and also wins wherever the warp samples
    outside the frame (the neighbor has no evidence there).
    """
    _require(conf_t, "current-frame confidence")
    _require(conf_tpk, "neighboring-frame confidence")
    _require(pl_tpk, "the neighboring-frame pseudo-label")
    _require(flow, "forward flow")
    check_same_shape(pl_t, conf_t, pl_tpk, conf_tpk, flow)
    _check_confidence(conf_t, "current-frame confidence")
    _check_confidence(conf_tpk, "neighboring-frame confidence")
    warped_labels = propagate_labels(pl_tpk, flow)
    warped_conf = propagate_plane(conf_tpk, flow, mode=NEAREST)
    take_neighbor = warped_labels.validity.data & (
        warped_conf.payload.data > conf_t.data
    )
    out = np.where(take_neighbor, warped_labels.payload.data, pl_t.data)
    return LabelMap(out, pl_t.class_space)


def refine_warp_frame(pl_tpk: LabelMap, flow: FlowField) -> LabelMap:
    """Adopt the warped neighboring-frame prediction wholesale.

    The temporal direction is determined solely by which flow the caller
    supplies (forward flow pairs with the next frame, backward flow with
    the previous one). Out-of-frame samples become ignore.
    """
    _require(flow, "flow")
    check_same_shape(pl_tpk, flow)
    return propagate_labels(pl_tpk, flow).payload


def refine_oracle(pl_t: LabelMap, gt_t: LabelMap) -> LabelMap:
    """Upper-bound filter: keep only pixels that match the ground truth."""
    _require(gt_t, "ground truth")
    check_same_shape(pl_t, gt_t)
    keep = (pl_t.data == gt_t.data) & (gt_t.data != IGNORE_VALUE)
    out = np.where(keep, pl_t.data, np.uint8(IGNORE_VALUE))
    return LabelMap(out, pl_t.class_space)


def retained_fraction(refined: LabelMap) -> float:
    """Fraction of pixels that survived filtering (label != ignore)."""
    total = refined.data.size
    kept = int(np.count_nonzero(refined.data != IGNORE_VALUE))
    return kept / total
