"""Cross-domain class-mix augmentation and its temporally consistent variant.

Class-mix pastes every pixel of a selected set of source classes onto a
target image and its label map. The consistent variant applies one shared
class set to both frames of a pair so that optical-flow correspondence
between the frames is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import IGNORE_VALUE, LabelMap
from .errors import EmptySourceError, ParameterError, ShapeError


@dataclass(frozen=True)
class MixPlan:
    """The class set to paste, reproducible from (seed, source labels)."""

    classes: frozenset[int]
    seed: int

    def __post_init__(self):
        if IGNORE_VALUE in self.classes:
            raise ParameterError("the ignore sentinel cannot be a mix class")


@dataclass(frozen=True)
class MixFrame:
    """All rasters of one timestep entering a class-mix."""

    img_src: np.ndarray
    img_tgt: np.ndarray
    y_src: LabelMap
    pl_tgt: LabelMap


def select_mix_classes(y_src: LabelMap, seed: int) -> MixPlan:
    """Sample ceil(m/2) of the m distinct non-ignore classes present.

    Selection is uniform without replacement and fully determined by the
    seed and the set of classes present.
    """
    present = np.unique(y_src.data)
    present = sorted(int(c) for c in present if c != IGNORE_VALUE)
    if not present:
        raise EmptySourceError("source label map carries no non-ignore pixels")
    count = math.ceil(len(present) / 2)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(len(present), size=count, replace=False)
    return MixPlan(classes=frozenset(present[i] for i in chosen), seed=seed)


def _paste_mask(y_src: LabelMap, plan: MixPlan) -> np.ndarray:
    mask = np.zeros(y_src.shape, dtype=bool)
    for cls in plan.classes:
        mask |= y_src.data == cls
    return mask


def classmix(
    img_src: np.ndarray,
    img_tgt: np.ndarray,
    y_src: LabelMap,
    pl_tgt: LabelMap,
    plan: MixPlan,
) -> tuple[np.ndarray, LabelMap]:
    """Paste source pixels of the planned classes onto the target.

    Output pixels come verbatim from exactly one input, decided only by
    whether the source label belongs to the plan. Ignore-labeled source
    pixels are never pasted.
    """
    if img_src.shape != img_tgt.shape:
        raise ShapeError(
            f"image shapes differ: {img_src.shape} vs {img_tgt.shape}"
        )
    if img_src.shape[:2] != y_src.shape or y_src.shape != pl_tgt.shape:
        raise ShapeError(
            f"rasters disagree on dimensions: images {img_src.shape[:2]}, "
            f"source labels {y_src.shape}, target labels {pl_tgt.shape}"
        )
    mask = _paste_mask(y_src, plan)
    img_mask = mask if img_src.ndim == 2 else mask[:, :, None]
    mixed_img = np.where(img_mask, img_src, img_tgt)
    mixed_lbl = np.where(mask, y_src.data, pl_tgt.data)
    return mixed_img, LabelMap(mixed_lbl, pl_tgt.class_space)


def consistent_classmix_pair(
    frame_t: MixFrame, frame_tpk: MixFrame, plan: MixPlan
) -> tuple[tuple[np.ndarray, LabelMap], tuple[np.ndarray, LabelMap]]:
    """Apply classmix at both timesteps with one identical class set."""
    mixed_t = classmix(
        frame_t.img_src, frame_t.img_tgt, frame_t.y_src, frame_t.pl_tgt, plan
    )
    mixed_tpk = classmix(
        frame_tpk.img_src, frame_tpk.img_tgt, frame_tpk.y_src, frame_tpk.pl_tgt, plan
    )
    return mixed_t, mixed_tpk
