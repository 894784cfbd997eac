"""Pull-based raster alignment along forward optical flow.

Each output pixel (i, j) gathers from the source raster at
(i + dy[i, j], j + dx[i, j]). Labels and logits use nearest-neighbor
sampling with round-half-away-from-zero; scalar planes may also be
sampled bilinearly. Pixels whose sample location falls outside the
source raster are marked invalid and filled with the ignore sentinel
(labels) or zero (planes, logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    IGNORE_VALUE,
    FlowField,
    LabelMap,
    LogitVolume,
    ScalarPlane,
    ValidityMask,
    check_same_shape,
)
from .errors import ParameterError

NEAREST = "nearest"
BILINEAR = "bilinear"


@dataclass(frozen=True)
class WarpResult:
    """Aligned payload plus the mask of pixels whose sample stayed in bounds."""

    payload: LabelMap | ScalarPlane | LogitVolume
    validity: ValidityMask


def _sample_coords(flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    h, w = flow.shape
    sy = flow.dy + np.arange(h, dtype=np.float64)[:, None]
    sx = flow.dx + np.arange(w, dtype=np.float64)[None, :]
    return sy, sx


def _gather_index(flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Flat nearest-neighbor gather indices (clipped in-range) plus validity.

    Coordinate math runs in float64 with round-half-away-from-zero, so a
    naive per-pixel reference agrees bit-exactly. In-place updates keep
    the pass count low; this is the hot path of every warp.
    """
    h, w = flow.shape
    sy = flow.dy.astype(np.float64)
    sy += np.arange(h, dtype=np.float64)[:, None]
    adjust = np.copysign(0.5, sy)
    sy += adjust
    np.trunc(sy, out=sy)
    sx = flow.dx.astype(np.float64)
    sx += np.arange(w, dtype=np.float64)[None, :]
    np.copysign(0.5, sx, out=adjust)
    sx += adjust
    np.trunc(sx, out=sx)
    valid = sy >= 0.0
    valid &= sy <= float(h - 1)
    valid &= sx >= 0.0
    valid &= sx <= float(w - 1)
    # flat index; exact in float64 for any raster that fits in memory
    sy *= w
    sy += sx
    idx = sy.astype(np.intp)
    np.clip(idx, 0, h * w - 1, out=idx)  # invalid lanes are masked later
    return idx, valid


def propagate_labels(labels_tpk: LabelMap, flow: FlowField) -> WarpResult:
    """Align a frame-(t+k) label map onto frame t via forward flow.

    Uses nearest-neighbor sampling; out-of-bounds samples become ignore
    pixels with a false validity bit.
    """
    check_same_shape(labels_tpk, flow)
    idx, valid = _gather_index(flow)
    gathered = labels_tpk.data.ravel().take(idx)
    payload = np.where(valid, gathered, np.uint8(IGNORE_VALUE))
    return WarpResult(
        payload=LabelMap(payload, labels_tpk.class_space),
        validity=ValidityMask(valid),
    )


def propagate_plane(
    plane: ScalarPlane, flow: FlowField, mode: str = NEAREST
) -> WarpResult:
    """Align a scalar plane onto frame t via forward flow.

    `nearest` mirrors propagate_labels. `bilinear` interpolates the four
    surrounding samples; a pixel is valid only when its exact sample point
    lies inside the raster hull [0, H-1] x [0, W-1], so every neighbor
    with nonzero weight is in bounds.
    """
    check_same_shape(plane, flow)
    if mode == NEAREST:
        idx, valid = _gather_index(flow)
        payload = np.where(valid, plane.data.ravel().take(idx), np.float32(0.0))
        return WarpResult(payload=ScalarPlane(payload), validity=ValidityMask(valid))
    if mode != BILINEAR:
        raise ParameterError(f"unknown sampling mode {mode!r}")

    h, w = plane.shape
    sy, sx = _sample_coords(flow)
    valid = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = sy - y0
    wx = sx - x0
    y0i = np.clip(y0, 0, h - 1).astype(np.intp)
    x0i = np.clip(x0, 0, w - 1).astype(np.intp)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    # clipped neighbors only ever contribute with weight zero on valid lanes
    d = plane.data.astype(np.float64)
    interp = (
        (1.0 - wy) * (1.0 - wx) * d[y0i, x0i]
        + (1.0 - wy) * wx * d[y0i, x1i]
        + wy * (1.0 - wx) * d[y1i, x0i]
        + wy * wx * d[y1i, x1i]
    )
    payload = np.where(valid, interp, 0.0).astype(np.float32)
    return WarpResult(payload=ScalarPlane(payload), validity=ValidityMask(valid))


def propagate_logits(volume: LogitVolume, flow: FlowField) -> WarpResult:
    """Channel-wise nearest warp of a logit volume with one shared validity mask."""
    check_same_shape(volume, flow)
    h, w = flow.shape
    idx, valid = _gather_index(flow)
    rows = volume.data.reshape(h * w, volume.channels)
    gathered = rows[idx.ravel()].reshape(h, w, volume.channels)
    payload = np.where(valid[:, :, None], gathered, np.float32(0.0))
    return WarpResult(
        payload=LogitVolume(payload, volume.class_space),
        validity=ValidityMask(valid),
    )
