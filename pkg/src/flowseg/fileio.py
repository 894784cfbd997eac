"""Bit-exact readers and writers for flow, label, scalar-plane, and manifest files.

Formats:

* flow: Middlebury .flo (float32 magic 202021.25, int32 width/height,
  row-major interleaved little-endian (u, v) float32 pairs);
* labels: single-channel 8-bit PNG;
* scalar planes: grayscale little-endian PFM, rows stored bottom-to-top;
* manifests: JSON Lines, one record per line.

Readers never clamp or coerce: any out-of-contract byte stream raises a
typed error from `flowseg.errors`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ClassSpace, FlowField, LabelMap, ScalarPlane
from .errors import (
    DataError,
    DuplicateRecordError,
    FormatError,
    LengthError,
    ManifestParseError,
    UnsupportedFormatError,
)

FLO_MAGIC = 202021.25  # float32 whose bytes read "PIEH" in little-endian

_DOMAINS = ("source", "target")
_SPLITS = ("train", "val")


# ---------------------------------------------------------------------------
# Middlebury .flo


def read_flo(path) -> FlowField:
    """Decode a Middlebury .flo file into a FlowField."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise LengthError(f"{path}: file shorter than the 12-byte header")
    (magic,) = struct.unpack("<f", blob[0:4])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    width, height = struct.unpack("<ii", blob[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(blob) != expected:
        raise LengthError(
            f"{path}: payload is {len(blob)} bytes, expected {expected} "
            f"for a {width}x{height} field"
        )
    pairs = np.frombuffer(blob, dtype="<f4", offset=12).reshape(height, width, 2)
    if not np.all(np.isfinite(pairs)):
        raise DataError(f"{path}: flow contains non-finite values")
    return FlowField(dx=pairs[:, :, 0], dy=pairs[:, :, 1])


def write_flo(flow: FlowField, path) -> None:
    """Write a FlowField as a Middlebury .flo file (12 + 8*W*H bytes)."""
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    pairs = np.stack([flow.dx, flow.dy], axis=-1).astype("<f4")
    Path(path).write_bytes(header + pairs.tobytes())


# ---------------------------------------------------------------------------
# Label PNG


def read_label_png(path, class_space: ClassSpace) -> LabelMap:
    """Decode a single-channel 8-bit PNG and validate against the class space."""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise FormatError(f"{path}: not a PNG file (format {img.format})")
            if img.mode != "L":
                raise FormatError(
                    f"{path}: labels must be single-channel 8-bit PNG, got mode {img.mode}"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image") from exc
    return LabelMap(arr, class_space)


def write_label_png(labels: LabelMap, path) -> None:
    """Write a LabelMap as a single-channel 8-bit PNG."""
    Image.fromarray(labels.data, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Grayscale PFM


def _read_pfm_token(blob: bytes, offset: int, path) -> tuple[bytes, int]:
    end = blob.find(b"\n", offset)
    if end < 0:
        raise LengthError(f"{path}: PFM header line missing terminator")
    return blob[offset:end].rstrip(b"\r"), end + 1


def read_pfm(path) -> ScalarPlane:
    """Decode a grayscale little-endian PFM into a top-left-origin plane."""
    blob = Path(path).read_bytes()
    header, offset = _read_pfm_token(blob, 0, path)
    if header == b"PF":
        raise UnsupportedFormatError(f"{path}: color PFM ('PF') is not supported")
    if header != b"Pf":
        raise FormatError(f"{path}: bad PFM header {header!r}")
    dims, offset = _read_pfm_token(blob, offset, path)
    parts = dims.split()
    if len(parts) != 2:
        raise FormatError(f"{path}: bad PFM dimension line {dims!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM dimension line {dims!r}") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    scale_line, offset = _read_pfm_token(blob, offset, path)
    try:
        scale = float(scale_line)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM scale line {scale_line!r}") from exc
    if scale >= 0:
        raise UnsupportedFormatError(
            f"{path}: only little-endian PFM (negative scale) is supported"
        )
    expected = 4 * width * height
    if len(blob) - offset != expected:
        raise LengthError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected}"
        )
    rows = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(height, width)
    data = np.flipud(rows)  # PFM stores rows bottom-to-top
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: plane contains non-finite values")
    return ScalarPlane(data)


def write_pfm(plane: ScalarPlane, path) -> None:
    """Write a ScalarPlane as a grayscale little-endian PFM."""
    header = b"Pf\n%d %d\n-1.0\n" % (plane.width, plane.height)
    rows = np.flipud(plane.data).astype("<f4")
    Path(path).write_bytes(header + rows.tobytes())


# ---------------------------------------------------------------------------
# Dataset manifest (JSON Lines)


class _RecordValidationError(ValueError):
    # re-wrapped by load_manifest into a ManifestParseError with a line number
    pass


@dataclass(frozen=True)
class ManifestRecord:
    """One frame of one clip, binding its on-disk artifacts."""

    clip_id: str
    frame_index: int
    domain: str
    split: str
    image_path: str | None = None
    label_path: str | None = None
    flow_fwd_path: str | None = None
    flow_bwd_path: str | None = None

    def __post_init__(self):
        if not self.clip_id:
            raise _RecordValidationError("clip_id must be non-empty")
        if not isinstance(self.frame_index, int) or self.frame_index < 0:
            raise _RecordValidationError("frame_index must be a non-negative integer")
        if self.domain not in _DOMAINS:
            raise _RecordValidationError(
                f"domain must be one of {_DOMAINS}, got {self.domain!r}"
            )
        if self.split not in _SPLITS:
            raise _RecordValidationError(
                f"split must be one of {_SPLITS}, got {self.split!r}"
            )
        if not any(
            (self.image_path, self.label_path, self.flow_fwd_path, self.flow_bwd_path)
        ):
            raise _RecordValidationError("record carries no artifact paths")

    def to_json_dict(self) -> dict:
        out = {"clip_id": self.clip_id, "frame_index": self.frame_index}
        for name in ("image_path", "label_path", "flow_fwd_path", "flow_bwd_path"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out["domain"] = self.domain
        out["split"] = self.split
        return out


@dataclass(frozen=True)
class DatasetManifest:
    """Validated record list plus a per-clip sorted frame index."""

    records: tuple[ManifestRecord, ...]
    root: Path

    def __post_init__(self):
        index: dict[str, dict[int, ManifestRecord]] = {}
        for rec in self.records:
            by_frame = index.setdefault(rec.clip_id, {})
            if rec.frame_index in by_frame:
                raise DuplicateRecordError(
                    f"duplicate record for clip {rec.clip_id!r} frame {rec.frame_index}"
                )
            by_frame[rec.frame_index] = rec
        object.__setattr__(self, "_by_clip", index)

    @property
    def clip_ids(self) -> list[str]:
        return sorted(self._by_clip)

    def frames(self, clip_id: str) -> list[int]:
        """Sorted frame indices of one clip."""
        return sorted(self._by_clip[clip_id])

    def record(self, clip_id: str, frame_index: int) -> ManifestRecord | None:
        return self._by_clip.get(clip_id, {}).get(frame_index)

    def resolve(self, relpath: str) -> Path:
        """Resolve a manifest-relative artifact path against the manifest root."""
        p = Path(relpath)
        return p if p.is_absolute() else self.root / p

    def labeled_records(self, split: str | None = None) -> list[ManifestRecord]:
        """Records with a label path, in deterministic clip-then-frame order."""
        out = [
            self._by_clip[cid][t]
            for cid in self.clip_ids
            for t in self.frames(cid)
            if self._by_clip[cid][t].label_path is not None
        ]
        if split is not None:
            out = [r for r in out if r.split == split]
        return out


_RECORD_FIELDS = {f.name for f in fields(ManifestRecord)}


def load_manifest(path) -> DatasetManifest:
    """Load and validate a JSON Lines manifest.

    Loading is order-independent: shuffled input lines produce an identical
    manifest. Line numbers are reported for malformed lines.
    """
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise ManifestParseError("record is not a JSON object", lineno)
            unknown = set(obj) - _RECORD_FIELDS
            if unknown:
                raise ManifestParseError(f"unknown fields {sorted(unknown)}", lineno)
            try:
                records.append(ManifestRecord(**obj))
            except _RecordValidationError as exc:
                raise ManifestParseError(str(exc), lineno) from exc
            except TypeError as exc:
                raise ManifestParseError(f"missing required fields ({exc})", lineno) from exc
    records.sort(key=lambda r: (r.clip_id, r.frame_index))
    return DatasetManifest(records=tuple(records), root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest as JSON Lines in clip-then-frame order."""
    path = Path(path)
    lines = [
        json.dumps(rec.to_json_dict())
        for rec in sorted(manifest.records, key=lambda r: (r.clip_id, r.frame_index))
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
