"""Confusion-matrix evaluation and temporal pseudo-label metrics.

The confusion matrix counts (ground truth row, prediction column) over
pixels whose ground truth is not ignore. Predicted-ignore pixels are not
scored; they are tracked in a separate per-class rejected vector so the
retained fraction stays recoverable. Matrices merge by element-wise sum,
which makes parallel evaluation order-independent and exact.

Temporal metrics warp the frame-(t+k) prediction onto frame t and score
it against the current prediction (predictive consistency), the current
ground truth (warped accuracy), or score the consistency-filtered map
against ground truth (consistency accuracy). Warp-invalid pixels are
excluded from scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import (
    IGNORE_VALUE,
    ClassSpace,
    FlowField,
    LabelMap,
    check_same_shape,
)
from .errors import ShapeError
from .refine import refine_consistency, retained_fraction
from .warp import propagate_labels

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts (rows = ground truth, columns = prediction).

    `rejected[c]` counts pixels with ground truth c whose prediction was
    ignore; those pixels never enter `counts`.
    """

    counts: np.ndarray
    rejected: np.ndarray
    class_space: ClassSpace

    def __post_init__(self):
        k = self.class_space.num_classes
        counts = np.asarray(self.counts, dtype=np.int64)
        rejected = np.asarray(self.rejected, dtype=np.int64)
        if counts.shape != (k, k):
            raise ShapeError(f"counts must be {k}x{k}, got {counts.shape}")
        if rejected.shape != (k,):
            raise ShapeError(f"rejected must have length {k}, got {rejected.shape}")
        counts = counts.copy()
        rejected = rejected.copy()
        counts.flags.writeable = False
        rejected.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "rejected", rejected)

    @classmethod
    def empty(cls, class_space: ClassSpace) -> "ConfusionMatrix":
        k = class_space.num_classes
        return cls(np.zeros((k, k), np.int64), np.zeros(k, np.int64), class_space)

    @property
    def pixels_evaluated(self) -> int:
        return int(self.counts.sum())

    @property
    def pixels_rejected(self) -> int:
        return int(self.rejected.sum())


def confusion_accumulate(
    pred: LabelMap, gt: LabelMap, acc: ConfusionMatrix
) -> ConfusionMatrix:
    """Return `acc` plus the confusion counts of one (prediction, truth) pair."""
    if pred.class_space != gt.class_space or pred.class_space != acc.class_space:
        raise ShapeError("prediction, truth, and accumulator class spaces differ")
    check_same_shape(pred, gt)
    k = acc.class_space.num_classes
    gt_flat = gt.data.ravel()
    pred_flat = pred.data.ravel()
    supervised = gt_flat != IGNORE_VALUE
    scored = supervised & (pred_flat != IGNORE_VALUE)
    idx = gt_flat[scored].astype(np.int64) * k + pred_flat[scored]
    counts = acc.counts + np.bincount(idx, minlength=k * k).reshape(k, k)
    rej_idx = gt_flat[supervised & (pred_flat == IGNORE_VALUE)].astype(np.int64)
    rejected = acc.rejected + np.bincount(rej_idx, minlength=k)
    return ConfusionMatrix(counts, rejected, acc.class_space)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Element-wise sum of two accumulators over the same class space."""
    if a.class_space != b.class_space:
        raise ShapeError("cannot merge matrices over different class spaces")
    return ConfusionMatrix(a.counts + b.counts, a.rejected + b.rejected, a.class_space)


@dataclass(frozen=True)
class ClassScore:
    class_id: int
    iou: float | None  # percent
    acc: float | None  # percent; None when the class never appears in gt


@dataclass(frozen=True)
class MetricReport:
    """Per-class IoU/Acc plus their means, all in percent."""

    per_class: tuple[ClassScore, ...]
    miou: float
    class_avg_acc: float
    pixels_evaluated: int
    retained_fraction: float | None = None

    def to_csv(self) -> str:
        """One row per class plus a summary row (2-decimal percentages)."""
        lines = ["class,iou,acc"]
        for score in self.per_class:
            iou = "" if score.iou is None else f"{score.iou:.2f}"
            acc = "" if score.acc is None else f"{score.acc:.2f}"
            lines.append(f"{score.class_id},{iou},{acc}")
        lines.append(f"mean,{self.miou:.2f},{self.class_avg_acc:.2f}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "miou": round(self.miou, 4),
            "class_avg_acc": round(self.class_avg_acc, 4),
            "pixels_evaluated": self.pixels_evaluated,
            "retained_fraction": (
                None
                if self.retained_fraction is None
                else round(self.retained_fraction, 6)
            ),
            "per_class": [
                {"class": s.class_id, "iou": s.iou, "acc": s.acc}
                for s in self.per_class
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


def mean_percent(values) -> float:
    """Arithmetic mean of the present (non-None) per-class percentages."""
    present = [v for v in values if v is not None]
    if not present:
        return 0.0
    return float(sum(present) / len(present))


def summarize(
    acc: ConfusionMatrix, class_universe: list[int] | None = None
) -> MetricReport:
    """Reduce a confusion matrix to per-class IoU/Acc and their means.

    IoU_c = TP / (TP + FP + FN) and Acc_c = TP / (TP + FN); classes whose
    denominator is zero are reported absent and excluded from the means.
    `class_universe` restricts which classes are reported and averaged.
    """
    k = acc.class_space.num_classes
    universe = list(range(k)) if class_universe is None else list(class_universe)
    for c in universe:
        if not 0 <= c < k:
            raise ShapeError(f"class {c} outside the class space 0..{k - 1}")
    tp = np.diag(acc.counts).astype(np.float64)
    gt_total = acc.counts.sum(axis=1).astype(np.float64)  # TP + FN
    pred_total = acc.counts.sum(axis=0).astype(np.float64)  # TP + FP
    union = gt_total + pred_total - tp

    scores = []
    for c in universe:
        if union[c] == 0:
            # absent from both ground truth and prediction: no entry, no
            # contribution to either mean
            continue
        iou = float(100.0 * tp[c] / union[c])
        cacc = None if gt_total[c] == 0 else float(100.0 * tp[c] / gt_total[c])
        scores.append(ClassScore(class_id=c, iou=iou, acc=cacc))

    evaluated = int(acc.counts[universe, :].sum())
    total_seen = acc.pixels_evaluated + acc.pixels_rejected
    retained = acc.pixels_evaluated / total_seen if total_seen > 0 else None
    return MetricReport(
        per_class=tuple(scores),
        miou=mean_percent(s.iou for s in scores),
        class_avg_acc=mean_percent(s.acc for s in scores),
        pixels_evaluated=evaluated,
        retained_fraction=retained,
    )


def _warp_and_score(
    prediction_tpk: LabelMap,
    flow: FlowField,
    reference: LabelMap,
    class_universe: list[int] | None,
) -> MetricReport:
    check_same_shape(prediction_tpk, flow, reference)
    warped = propagate_labels(prediction_tpk, flow).payload
    acc = confusion_accumulate(warped, reference, ConfusionMatrix.empty(reference.class_space))
    return summarize(acc, class_universe)


def pl_pred_consis(
    pl_t: LabelMap,
    pl_tpk: LabelMap,
    flow: FlowField,
    class_universe: list[int] | None = None,
) -> MetricReport:
    """Temporal predictive consistency: warped future prediction vs current one.

    The current-frame prediction plays the ground-truth role; warp-invalid
    pixels (warped prediction = ignore) are excluded from scoring.
    """
    return _warp_and_score(pl_tpk, flow, pl_t, class_universe)


def pl_warped(
    pl_tpk: LabelMap,
    flow: FlowField,
    gt_t: LabelMap,
    class_universe: list[int] | None = None,
) -> MetricReport:
    """Warped future prediction scored against the current ground truth."""
    return _warp_and_score(pl_tpk, flow, gt_t, class_universe)


def pl_consistency(
    pl_t: LabelMap,
    pl_tpk: LabelMap,
    flow: FlowField,
    gt_t: LabelMap,
    class_universe: list[int] | None = None,
) -> MetricReport:
    """Consistency-filtered prediction scored against the current ground truth.

    The reported retained fraction is the surviving share of *all* pixels
    of the filtered map, not only of the supervised ones.
    """
    check_same_shape(pl_t, pl_tpk, flow, gt_t)
    filtered = refine_consistency(pl_t, pl_tpk, flow)
    acc = confusion_accumulate(
        filtered, gt_t, ConfusionMatrix.empty(gt_t.class_space)
    )
    report = summarize(acc, class_universe)
    return MetricReport(
        per_class=report.per_class,
        miou=report.miou,
        class_avg_acc=report.class_avg_acc,
        pixels_evaluated=report.pixels_evaluated,
        retained_fraction=retained_fraction(filtered),
    )
