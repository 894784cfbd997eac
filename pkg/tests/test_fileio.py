import json
import struct

import numpy as np
import pytest
from PIL import Image

from flowseg.core import ClassSpace, FlowField, LabelMap, ScalarPlane
from flowseg.errors import (
    DataError,
    DuplicateRecordError,
    FormatError,
    InvalidLabelError,
    LengthError,
    ManifestParseError,
    UnsupportedFormatError,
)
from flowseg.fileio import (
    DatasetManifest,
    ManifestRecord,
    load_manifest,
    read_flo,
    read_label_png,
    read_pfm,
    write_flo,
    write_label_png,
    write_manifest,
    write_pfm,
)


class TestFlo:
    def test_hand_assembled_single_pixel(self, tmp_path):
        # magic, w=1, h=1, (u=2.0, v=-1.0)
        blob = struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<ff", 2.0, -1.0)
        p = tmp_path / "one.flo"
        p.write_bytes(blob)
        flow = read_flo(p)
        assert flow.dx[0, 0] == 2.0
        assert flow.dy[0, 0] == -1.0

    def test_bad_magic(self, tmp_path):
        blob = struct.pack("<fii", 123.45, 1, 1) + b"\x00" * 8
        p = tmp_path / "bad.flo"
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            read_flo(p)

    def test_truncated_payload(self, tmp_path):
        blob = struct.pack("<fii", 202021.25, 2, 2) + b"\x00" * 8
        p = tmp_path / "short.flo"
        p.write_bytes(blob)
        with pytest.raises(LengthError):
            read_flo(p)

    def test_trailing_bytes(self, tmp_path):
        blob = struct.pack("<fii", 202021.25, 1, 1) + b"\x00" * 12
        p = tmp_path / "long.flo"
        p.write_bytes(blob)
        with pytest.raises(LengthError):
            read_flo(p)

    def test_non_finite_payload(self, tmp_path):
        blob = struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<ff", np.nan, 0.0)
        p = tmp_path / "nan.flo"
        p.write_bytes(blob)
        with pytest.raises(DataError):
            read_flo(p)

    def test_size_formula(self, tmp_path):
        flow = FlowField.zero(2, 2)
        p = tmp_path / "zero.flo"
        write_flo(flow, p)
        assert p.stat().st_size == 12 + 8 * 2 * 2

    def test_round_trip_bits(self, tmp_path, rng):
        dx = rng.standard_normal((5, 7)).astype(np.float32)
        dy = rng.standard_normal((5, 7)).astype(np.float32)
        p = tmp_path / "rt.flo"
        write_flo(FlowField(dx, dy), p)
        back = read_flo(p)
        assert np.array_equal(back.dx, dx)
        assert np.array_equal(back.dy, dy)
        blob = p.read_bytes()
        write_flo(back, p)
        assert p.read_bytes() == blob

    def test_nan_field_rejected_at_construction(self):
        with pytest.raises(DataError):
            FlowField(np.array([[np.nan]]), np.array([[0.0]]))


class TestLabelPng:
    def test_constant_image(self, tmp_path):
        p = tmp_path / "c.png"
        Image.fromarray(np.full((2, 2), 5, np.uint8), mode="L").save(p)
        lm = read_label_png(p, ClassSpace(6))
        assert np.all(lm.data == 5)

    def test_out_of_range_value(self, tmp_path):
        p = tmp_path / "bad.png"
        Image.fromarray(np.full((2, 2), 200, np.uint8), mode="L").save(p)
        with pytest.raises(InvalidLabelError):
            read_label_png(p, ClassSpace(19))

    def test_rejects_rgb(self, tmp_path):
        p = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((2, 2, 3), np.uint8), mode="RGB").save(p)
        with pytest.raises(FormatError):
            read_label_png(p, ClassSpace(19))

    def test_rejects_16bit(self, tmp_path):
        p = tmp_path / "deep.png"
        Image.fromarray(np.zeros((2, 2), np.uint16)).save(p)
        with pytest.raises(FormatError):
            read_label_png(p, ClassSpace(19))

    def test_rejects_non_png(self, tmp_path):
        p = tmp_path / "x.png"
        p.write_bytes(b"not an image at all")
        with pytest.raises(FormatError):
            read_label_png(p, ClassSpace(19))

    def test_round_trip(self, tmp_path, rng):
        space = ClassSpace(19)
        data = rng.integers(0, 19, size=(6, 4)).astype(np.uint8)
        data[0, 0] = 255
        p = tmp_path / "rt.png"
        write_label_png(LabelMap(data, space), p)
        assert np.array_equal(read_label_png(p, space).data, data)


class TestPfm:
    def test_hand_assembled_row_flip(self, tmp_path):
        # 1x2 plane, file rows stored bottom-to-top: 0.25 then 0.75
        blob = b"Pf\n1 2\n-1.0\n" + struct.pack("<ff", 0.25, 0.75)
        p = tmp_path / "x.pfm"
        p.write_bytes(blob)
        plane = read_pfm(p)
        assert plane.data[0, 0] == 0.75
        assert plane.data[1, 0] == 0.25

    def test_color_header_unsupported(self, tmp_path):
        p = tmp_path / "c.pfm"
        p.write_bytes(b"PF\n1 1\n-1.0\n" + b"\x00" * 12)
        with pytest.raises(UnsupportedFormatError):
            read_pfm(p)

    def test_big_endian_unsupported(self, tmp_path):
        p = tmp_path / "b.pfm"
        p.write_bytes(b"Pf\n1 1\n1.0\n" + b"\x00" * 4)
        with pytest.raises(UnsupportedFormatError):
            read_pfm(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.pfm"
        p.write_bytes(b"Px\n1 1\n-1.0\n" + b"\x00" * 4)
        with pytest.raises(FormatError):
            read_pfm(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.pfm"
        p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 8)
        with pytest.raises(LengthError):
            read_pfm(p)

    def test_round_trip(self, tmp_path, rng):
        data = rng.standard_normal((3, 5)).astype(np.float32)
        p = tmp_path / "rt.pfm"
        write_pfm(ScalarPlane(data), p)
        assert np.array_equal(read_pfm(p).data, data)


def _record(clip, frame, **kw):
    base = dict(
        clip_id=clip,
        frame_index=frame,
        domain="target",
        split="train",
        label_path=f"labels/{clip}/{frame:06d}.png",
    )
    base.update(kw)
    return base


class TestManifest:
    def test_sorted_insertion(self, tmp_path):
        p = tmp_path / "m.jsonl"
        lines = [json.dumps(_record("clip", f)) for f in (20, 19)]
        p.write_text("\n".join(lines) + "\n")
        m = load_manifest(p)
        assert m.frames("clip") == [19, 20]

    def test_duplicate_frame(self, tmp_path):
        p = tmp_path / "m.jsonl"
        lines = [json.dumps(_record("clip", 20)), json.dumps(_record("clip", 20))]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DuplicateRecordError):
            load_manifest(p)

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps(_record("clip", 1)) + "\n{oops\n")
        with pytest.raises(ManifestParseError) as err:
            load_manifest(p)
        assert err.value.line_number == 2

    def test_missing_required_field(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rec = _record("clip", 1)
        del rec["domain"]
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestParseError):
            load_manifest(p)

    def test_no_artifacts_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rec = _record("clip", 1)
        del rec["label_path"]
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestParseError):
            load_manifest(p)

    def test_unknown_field_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rec = _record("clip", 1, surprise=True)
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestParseError):
            load_manifest(p)

    def test_single_labeled_frame_convention(self, tmp_path):
        # a 30-frame clip labeled only at index 19 (zero-based 20th frame)
        p = tmp_path / "m.jsonl"
        lines = []
        for f in range(30):
            rec = dict(
                clip_id="seq",
                frame_index=f,
                domain="target",
                split="val",
                image_path=f"img/seq/{f:06d}.png",
            )
            if f == 19:
                rec["label_path"] = "labels/seq/000019.png"
            lines.append(json.dumps(rec))
        p.write_text("\n".join(lines) + "\n")
        m = load_manifest(p)
        labeled = m.labeled_records()
        assert len(labeled) == 1
        assert labeled[0].frame_index == 19

    def test_order_independence(self, tmp_path, rng):
        recs = [_record(f"clip{c}", f) for c in range(3) for f in range(4)]
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        p1.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
        shuffled = list(recs)
        rng.shuffle(shuffled)
        p2.write_text("\n".join(json.dumps(r) for r in shuffled) + "\n")
        assert load_manifest(p1).records == load_manifest(p2).records

    def test_write_round_trip(self, tmp_path):
        records = tuple(
            ManifestRecord(
                clip_id=f"clip{c}",
                frame_index=f,
                domain="source",
                split="val",
                label_path=f"l/{c}/{f}.png",
                flow_fwd_path=f"f/{c}/{f}.flo" if f < 3 else None,
            )
            for c in range(2)
            for f in range(4)
        )
        m = DatasetManifest(records=records, root=tmp_path)
        p = tmp_path / "m.jsonl"
        write_manifest(m, p)
        assert load_manifest(p).records == records
