"""Deterministic synthetic video-shift generator.

Renders sequences of flat-colored rectangles translating with integer
velocities over a static background. Because motion is integer-valued,
the emitted forward/backward flow is exact and nearest-neighbor warping
of the next frame's labels must reproduce the current frame's labels on
every pixel that is not occluded or disoccluded between the two frames.
That identity is the oracle every flow-dependent test builds on.

Optionally the generator degrades a copy of each label map with
independent per-pixel label noise and emits it as the frame's
"prediction", together with a confidence plane (1.0 on intact pixels,
0.5 on flipped ones).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ClassSpace, FlowField, LabelMap, ScalarPlane, ValidityMask
from .errors import ParameterError
from .fileio import (
    DatasetManifest,
    ManifestRecord,
    write_flo,
    write_label_png,
    write_manifest,
    write_pfm,
)

FLIPPED_CONFIDENCE = 0.5


@dataclass(frozen=True)
class RectObject:
    """An axis-aligned rectangle translating at integer velocity."""

    class_id: int
    x: int
    y: int
    width: int
    height: int
    vx: int
    vy: int
    depth: int  # higher depth renders on top

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("object width/height must be positive")

    def position(self, t: int) -> tuple[int, int]:
        return self.x + self.vx * t, self.y + self.vy * t


@dataclass(frozen=True)
class WorldSpec:
    """Full description of one synthetic clip."""

    width: int
    height: int
    num_classes: int
    background_class: int
    objects: tuple[RectObject, ...]
    num_frames: int
    seed: int = 1
    noise_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("canvas dimensions must be positive")
        if self.num_frames < 1:
            raise ParameterError("sequence length must be at least 1")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ParameterError("noise rate must lie in [0, 1)")
        space = self.class_space
        if not 0 <= self.background_class < space.num_classes:
            raise ParameterError("background class outside the class space")
        depths = [o.depth for o in self.objects]
        if len(set(depths)) != len(depths):
            raise ParameterError("object depths must be unique (total order)")
        for obj in self.objects:
            if not 0 <= obj.class_id < space.num_classes:
                raise ParameterError(
                    f"object class {obj.class_id} outside the class space"
                )

    @property
    def class_space(self) -> ClassSpace:
        return ClassSpace(self.num_classes)

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "num_classes": self.num_classes,
            "background_class": self.background_class,
            "num_frames": self.num_frames,
            "seed": self.seed,
            "noise_rate": self.noise_rate,
            "objects": [
                {
                    "class_id": o.class_id,
                    "x": o.x,
                    "y": o.y,
                    "width": o.width,
                    "height": o.height,
                    "vx": o.vx,
                    "vy": o.vy,
                    "depth": o.depth,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "WorldSpec":
        known = {
            "width", "height", "num_classes", "background_class",
            "num_frames", "seed", "noise_rate", "objects",
        }
        unknown = set(obj) - known
        if unknown:
            raise ParameterError(f"unknown world-spec fields {sorted(unknown)}")
        objects = tuple(RectObject(**o) for o in obj.get("objects", []))
        kwargs = {k: v for k, v in obj.items() if k != "objects"}
        return cls(objects=objects, **kwargs)


def load_world_spec(path) -> WorldSpec:
    return WorldSpec.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_world_spec(spec: WorldSpec, path) -> None:
    Path(path).write_text(
        json.dumps(spec.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class SequenceFrame:
    """All artifacts of one rendered frame."""

    index: int
    image: np.ndarray  # (H, W, 3) uint8, flat color per class
    labels: LabelMap
    flow_fwd: FlowField | None  # to the next frame; None on the last frame
    flow_bwd: FlowField | None  # to the previous frame; None on the first
    occluded_fwd: ValidityMask | None  # true where the forward identity may fail
    occluded_bwd: ValidityMask | None
    prediction: LabelMap
    confidence: ScalarPlane


def _class_color(class_id: int) -> tuple[int, int, int]:
    # deterministic, well-separated flat colors
    return (
        (37 * class_id + 101) % 256,
        (97 * class_id + 31) % 256,
        (17 * class_id + 197) % 256,
    )


def _render(spec: WorldSpec, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels plus per-pixel velocity (vx, vy) of the topmost entity at time t."""
    labels = np.full((spec.height, spec.width), spec.background_class, dtype=np.uint8)
    vx = np.zeros((spec.height, spec.width), dtype=np.int64)
    vy = np.zeros((spec.height, spec.width), dtype=np.int64)
    for obj in sorted(spec.objects, key=lambda o: o.depth):
        ox, oy = obj.position(t)
        x0, x1 = max(ox, 0), min(ox + obj.width, spec.width)
        y0, y1 = max(oy, 0), min(oy + obj.height, spec.height)
        if x0 >= x1 or y0 >= y1:
            continue  # fully off canvas contributes nothing
        labels[y0:y1, x0:x1] = obj.class_id
        vx[y0:y1, x0:x1] = obj.vx
        vy[y0:y1, x0:x1] = obj.vy
    return labels, vx, vy


def _occlusion_mask(
    labels_a: np.ndarray, vx: np.ndarray, vy: np.ndarray, labels_b: np.ndarray
) -> np.ndarray:
    """True where the entity tracked from frame a shows a different class in b.

    Out-of-canvas tracks are also marked; the warp reports them invalid,
    so either way they are excluded from identity checks.
    """
    h, w = labels_a.shape
    yy, xx = np.mgrid[0:h, 0:w]
    ty = yy + vy
    tx = xx + vx
    inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
    occluded = ~inside
    ty_c = np.clip(ty, 0, h - 1)
    tx_c = np.clip(tx, 0, w - 1)
    changed = labels_b[ty_c, tx_c] != labels_a
    occluded |= inside & changed
    return occluded


def _noise_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, frame_index, 0x51])


def _noisy_prediction(
    labels: np.ndarray, spec: WorldSpec, frame_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flip a noise_rate fraction of pixels to uniformly random *other* classes."""
    rng = _noise_rng(spec.seed, frame_index)
    flip = rng.random(labels.shape) < spec.noise_rate
    if spec.num_classes == 1:
        flip[:] = False  # no other class exists to flip to
    offsets = rng.integers(1, max(spec.num_classes, 2), size=labels.shape)
    flipped = ((labels.astype(np.int64) + offsets) % spec.num_classes).astype(np.uint8)
    pred = np.where(flip, flipped, labels)
    return pred, flip


def generate_sequence(spec: WorldSpec) -> list[SequenceFrame]:
    """Render every frame with exact forward/backward flow and occlusion masks."""
    space = spec.class_space
    rendered = [_render(spec, t) for t in range(spec.num_frames)]
    palette = np.array(
        [_class_color(c) for c in range(spec.num_classes)], dtype=np.uint8
    )
    frames = []
    for t, (labels, vx, vy) in enumerate(rendered):
        flow_fwd = flow_bwd = None
        occ_fwd = occ_bwd = None
        if t + 1 < spec.num_frames:
            flow_fwd = FlowField(vx.astype(np.float32), vy.astype(np.float32))
            occ_fwd = ValidityMask(
                _occlusion_mask(labels, vx, vy, rendered[t + 1][0])
            )
        if t > 0:
            flow_bwd = FlowField((-vx).astype(np.float32), (-vy).astype(np.float32))
            occ_bwd = ValidityMask(
                _occlusion_mask(labels, -vx, -vy, rendered[t - 1][0])
            )
        image = palette[labels]
        if spec.noise_rate > 0:
            pred_arr, flip = _noisy_prediction(labels, spec, t)
            confidence = np.where(flip, np.float32(FLIPPED_CONFIDENCE), np.float32(1.0))
        else:
            pred_arr = labels
            confidence = np.ones_like(labels, dtype=np.float32)
        frames.append(
            SequenceFrame(
                index=t,
                image=image,
                labels=LabelMap(labels, space),
                flow_fwd=flow_fwd,
                flow_bwd=flow_bwd,
                occluded_fwd=occ_fwd,
                occluded_bwd=occ_bwd,
                prediction=LabelMap(pred_arr, space),
                confidence=ScalarPlane(confidence),
            )
        )
    return frames


def emit_dataset(spec: WorldSpec, out_dir, clip_id: str = "clip000") -> Path:
    """Write a full dataset tree plus its manifest; returns the manifest path.

    Layout (paths stored manifest-relative):
      img/<clip>/<t>.png      flat-color RGB frames
      labels/<clip>/<t>.png   ground-truth label maps
      pred/<clip>/<t>.png     predictions (noisy copies when noise is on)
      conf/<clip>/<t>.pfm     prediction confidence planes
      flow_fwd/<clip>/<t>.flo forward unit flow (absent on the last frame)
      flow_bwd/<clip>/<t>.flo backward unit flow (absent on the first frame)
      manifest.jsonl
    """
    out = Path(out_dir)
    frames = generate_sequence(spec)
    records = []
    for sub in ("img", "labels", "pred", "conf", "flow_fwd", "flow_bwd"):
        (out / sub / clip_id).mkdir(parents=True, exist_ok=True)
    for frame in frames:
        t = frame.index
        stem = f"{t:06d}"
        rel = {
            "image_path": f"img/{clip_id}/{stem}.png",
            "label_path": f"labels/{clip_id}/{stem}.png",
        }
        Image.fromarray(frame.image, mode="RGB").save(
            out / rel["image_path"], format="PNG"
        )
        write_label_png(frame.labels, out / rel["label_path"])
        write_label_png(frame.prediction, out / f"pred/{clip_id}/{stem}.png")
        write_pfm(frame.confidence, out / f"conf/{clip_id}/{stem}.pfm")
        if frame.flow_fwd is not None:
            rel["flow_fwd_path"] = f"flow_fwd/{clip_id}/{stem}.flo"
            write_flo(frame.flow_fwd, out / rel["flow_fwd_path"])
        if frame.flow_bwd is not None:
            rel["flow_bwd_path"] = f"flow_bwd/{clip_id}/{stem}.flo"
            write_flo(frame.flow_bwd, out / rel["flow_bwd_path"])
        records.append(
            ManifestRecord(
                clip_id=clip_id,
                frame_index=t,
                domain="target",
                split="train",
                **rel,
            )
        )
    manifest_path = out / "manifest.jsonl"
    manifest = DatasetManifest(records=tuple(records), root=out)
    write_manifest(manifest, manifest_path)
    return manifest_path
