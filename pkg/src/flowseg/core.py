"""Shared raster types: label maps, flow fields, scalar planes, logit volumes.

Conventions used everywhere in this package:

* rasters are row-major with the origin at the top-left pixel,
  x growing rightward (columns) and y growing downward (rows);
* labels are uint8, valid values are 0..K-1 plus the ignore sentinel 255;
* all floating point rasters must be finite.

All types are immutable after construction (their numpy buffers are
copied and marked read-only), so values can be shared freely across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidLabelError, ParameterError, ShapeError

IGNORE_VALUE = 255


@dataclass(frozen=True)
class ClassSpace:
    """A K-way label space with the fixed ignore sentinel 255."""

    num_classes: int
    ignore_value: int = IGNORE_VALUE

    def __post_init__(self):
        if not 1 <= self.num_classes <= 254:
            raise ParameterError(
                f"num_classes must be in 1..254, got {self.num_classes}"
            )
        if self.ignore_value != IGNORE_VALUE:
            raise ParameterError(
                f"ignore sentinel is fixed at {IGNORE_VALUE}, got {self.ignore_value}"
            )

    def is_valid_fill(self, value: int) -> bool:
        return value == self.ignore_value or 0 <= value < self.num_classes


def _frozen_array(data, dtype, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if any(s <= 0 for s in arr.shape):
        raise ShapeError(f"{name} dimensions must be positive, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _check_finite(arr: np.ndarray, name: str):
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class IDs (H, W) with 255 marking ignored pixels."""

    data: np.ndarray
    class_space: ClassSpace

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind not in "ui":
            raise InvalidLabelError(f"labels must be integers, got dtype {raw.dtype}")
        if raw.dtype != np.uint8 and (np.any(raw < 0) or np.any(raw > 255)):
            # uint8 casting wraps silently; validate before the cast
            raise InvalidLabelError("label values do not fit 8-bit storage")
        arr = _frozen_array(raw, np.uint8, "label map", 2)
        k = self.class_space.num_classes
        invalid = (arr >= k) & (arr != IGNORE_VALUE)
        if np.any(invalid):
            raise InvalidLabelError(
                f"labels must be in 0..{k - 1} or {IGNORE_VALUE}; "
                f"found {sorted(np.unique(arr[invalid]).tolist())}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (dx, dy) in pixels, forward from frame t."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = _frozen_array(self.dx, np.float32, "flow dx", 2)
        dy = _frozen_array(self.dy, np.float32, "flow dy", 2)
        if dx.shape != dy.shape:
            raise ShapeError(f"dx shape {dx.shape} != dy shape {dy.shape}")
        _check_finite(dx, "flow dx")
        _check_finite(dy, "flow dy")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    @classmethod
    def zero(cls, width: int, height: int) -> "FlowField":
        z = np.zeros((height, width), dtype=np.float32)
        return cls(z, z)


@dataclass(frozen=True)
class ScalarPlane:
    """A single-channel real-valued raster (confidence, attention, weight)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float32, "scalar plane", 2)
        _check_finite(arr, "scalar plane")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LogitVolume:
    """Per-pixel class scores (H, W, C) where C equals the class-space size."""

    data: np.ndarray
    class_space: ClassSpace

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float32, "logit volume", 3)
        _check_finite(arr, "logit volume")
        if arr.shape[2] != self.class_space.num_classes:
            raise ShapeError(
                f"logit volume has {arr.shape[2]} channels but class space "
                f"has {self.class_space.num_classes} classes"
            )
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ValidityMask:
    """Boolean raster qualifying another raster of the same dimensions."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.data, bool, "validity mask", 2)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def full(cls, width: int, height: int, value: bool = True) -> "ValidityMask":
        return cls(np.full((height, width), value, dtype=bool))


def make_label_map(
    width: int, height: int, fill: int, class_space: ClassSpace
) -> LabelMap:
    """Create a constant label map; `fill` must be a valid class or 255."""
    if not class_space.is_valid_fill(fill):
        raise InvalidLabelError(
            f"fill {fill} outside 0..{class_space.num_classes - 1} and != {IGNORE_VALUE}"
        )
    if width <= 0 or height <= 0:
        raise ShapeError(f"dimensions must be positive, got {width}x{height}")
    return LabelMap(np.full((height, width), fill, dtype=np.uint8), class_space)


def apply_mask(labels: LabelMap, mask: ValidityMask) -> LabelMap:
    """Keep labels where the mask is true, write ignore where it is false."""
    if labels.shape != mask.shape:
        raise ShapeError(f"label shape {labels.shape} != mask shape {mask.shape}")
    out = np.where(mask.data, labels.data, np.uint8(IGNORE_VALUE))
    return LabelMap(out, labels.class_space)


def check_same_shape(*rasters) -> tuple[int, int]:
    """Raise ShapeError unless every raster shares one (H, W); return it."""
    shapes = {(r.height, r.width) for r in rasters if r is not None}
    if len(shapes) != 1:
        raise ShapeError(f"rasters disagree on dimensions: {sorted(shapes)}")
    return next(iter(shapes))
