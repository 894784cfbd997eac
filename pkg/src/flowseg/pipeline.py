"""Manifest-driven batch jobs: refinement runs, evaluation, frame-distance sweeps.

Jobs enumerate frame pairs (t, t+k) from a dataset manifest, process them
with a deterministic worker pool, and merge per-pair results in pair order
using integer accumulators, so reports and outputs are byte-identical for
any worker count.

Predictions and confidences live outside the manifest in directories laid
out as <dir>/<clip_id>/<frame:06d>.png (predictions) or .pfm (confidence).

Flow for |k| > 1 is obtained either by composing the manifest's unit-step
flows hop by hop (default) or by trusting the record's stored flow as the
direct t -> t+k field (flow_source="direct").
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    IGNORE_VALUE,
    ClassSpace,
    FlowField,
    LabelMap,
    ScalarPlane,
    check_same_shape,
)
from .errors import FlowsegError, MissingInputError, ParameterError
from .fileio import DatasetManifest, load_manifest, read_flo, read_label_png, read_pfm, write_label_png
from .metrics import (
    ConfusionMatrix,
    MetricReport,
    confusion_accumulate,
    merge,
    summarize,
)
from .refine import (
    refine_consistency,
    refine_max_confidence,
    refine_oracle,
    refine_warp_frame,
)
from .warp import NEAREST, propagate_labels, propagate_plane

REPORT_SCHEMA_VERSION = 1
FAILURE_BUDGET = 0.10

STRATEGIES = (
    "consistency",
    "max_confidence",
    "warp_forward",
    "warp_backward",
    "oracle",
    "none",
)
FLOW_STRATEGIES = ("consistency", "max_confidence", "warp_forward", "warp_backward")
FLOW_SOURCES = ("composed", "direct")


@dataclass(frozen=True)
class FramePair:
    """One (t, t+k) work item with every input path resolved."""

    clip_id: str
    t: int
    k: int
    pred_t_path: Path
    pred_tpk_path: Path
    flow_paths: tuple[Path, ...]
    conf_t_path: Path | None = None
    conf_tpk_path: Path | None = None
    gt_t_path: Path | None = None


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[FramePair, ...]
    skipped: int  # labeled frames lacking a partner or a complete flow chain


@dataclass(frozen=True)
class JobConfig:
    """Everything a batch job needs; mirrors the CLI flags and config JSON."""

    manifest: Path
    pred_dir: Path
    out_dir: Path | None = None
    conf_dir: Path | None = None
    strategy: str = "consistency"
    frame_distance: int = 1
    num_classes: int = 19
    class_universe: tuple[int, ...] | None = None
    split: str | None = None
    flow_source: str = "composed"
    workers: int = 1
    seed: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        if self.flow_source not in FLOW_SOURCES:
            raise ParameterError(
                f"unknown flow source {self.flow_source!r}; expected one of {FLOW_SOURCES}"
            )
        if self.workers < 1:
            raise ParameterError("workers must be at least 1")
        if self.strategy in FLOW_STRATEGIES and self.frame_distance == 0:
            raise ParameterError("flow-based strategies require frame_distance != 0")
        if self.strategy == "max_confidence" and self.conf_dir is None:
            raise MissingInputError("strategy max_confidence requires a confidence directory")

    @property
    def class_space(self) -> ClassSpace:
        return ClassSpace(self.num_classes)

    @property
    def effective_frame_distance(self) -> int:
        """The signed k the strategy actually uses."""
        if self.strategy == "warp_forward":
            return abs(self.frame_distance)
        if self.strategy == "warp_backward":
            return -abs(self.frame_distance)
        return self.frame_distance


def prediction_path(pred_dir: Path, clip_id: str, frame_index: int) -> Path:
    return Path(pred_dir) / clip_id / f"{frame_index:06d}.png"


def confidence_path(conf_dir: Path, clip_id: str, frame_index: int) -> Path:
    return Path(conf_dir) / clip_id / f"{frame_index:06d}.pfm"


def _flow_chain(
    manifest: DatasetManifest, clip_id: str, t: int, k: int, flow_source: str
) -> tuple[Path, ...] | None:
    """Paths of the flow files realizing o_{t -> t+k}, or None if incomplete."""
    if flow_source == "direct":
        rec = manifest.record(clip_id, t)
        attr = "flow_fwd_path" if k > 0 else "flow_bwd_path"
        p = getattr(rec, attr)
        return None if p is None else (manifest.resolve(p),)
    step = 1 if k > 0 else -1
    attr = "flow_fwd_path" if k > 0 else "flow_bwd_path"
    chain = []
    for hop in range(abs(k)):
        rec = manifest.record(clip_id, t + step * hop)
        p = None if rec is None else getattr(rec, attr)
        if p is None:
            return None
        chain.append(manifest.resolve(p))
    return tuple(chain)


def enumerate_pairs(
    manifest: DatasetManifest,
    k: int,
    pred_dir: Path,
    conf_dir: Path | None = None,
    split: str | None = None,
    flow_source: str = "composed",
) -> PairSet:
    """Emit one pair per labeled frame t whose partner t+k exists in the clip.

    Frames whose partner or flow chain is missing are skipped and counted.
    Ordering is deterministic: clips sorted by id, frames ascending.
    """
    if k == 0:
        raise ParameterError("frame distance must be nonzero")
    pairs = []
    skipped = 0
    for rec in manifest.labeled_records(split):
        partner = manifest.record(rec.clip_id, rec.frame_index + k)
        if partner is None:
            skipped += 1
            continue
        chain = _flow_chain(manifest, rec.clip_id, rec.frame_index, k, flow_source)
        if chain is None:
            skipped += 1
            continue
        pairs.append(
            FramePair(
                clip_id=rec.clip_id,
                t=rec.frame_index,
                k=k,
                pred_t_path=prediction_path(pred_dir, rec.clip_id, rec.frame_index),
                pred_tpk_path=prediction_path(pred_dir, rec.clip_id, rec.frame_index + k),
                flow_paths=chain,
                conf_t_path=(
                    confidence_path(conf_dir, rec.clip_id, rec.frame_index)
                    if conf_dir
                    else None
                ),
                conf_tpk_path=(
                    confidence_path(conf_dir, rec.clip_id, rec.frame_index + k)
                    if conf_dir
                    else None
                ),
                gt_t_path=(
                    manifest.resolve(rec.label_path) if rec.label_path else None
                ),
            )
        )
    return PairSet(pairs=tuple(pairs), skipped=skipped)


def compose_flows(fields: list[FlowField]) -> FlowField:
    """Chain unit-step flows into one t -> t+k field.

    Each hop samples the next field at the position reached so far
    (nearest-neighbor, so integer flows stay exact). Lanes whose chain
    exits the frame at any hop are given a displacement guaranteed to
    land out of bounds, which downstream warps report as invalid.
    """
    if not fields:
        raise MissingInputError("flow chain is empty")
    check_same_shape(*fields)
    h, w = fields[0].shape
    cur_dx = fields[0].dx.astype(np.float64)
    cur_dy = fields[0].dy.astype(np.float64)
    alive = np.ones((h, w), dtype=bool)
    for nxt in fields[1:]:
        carrier = FlowField(cur_dx.astype(np.float32), cur_dy.astype(np.float32))
        sampled_dx = propagate_plane(ScalarPlane(nxt.dx), carrier, NEAREST)
        sampled_dy = propagate_plane(ScalarPlane(nxt.dy), carrier, NEAREST)
        alive &= sampled_dx.validity.data
        cur_dx = cur_dx + sampled_dx.payload.data
        cur_dy = cur_dy + sampled_dy.payload.data
    out_of_frame = float(w + h + 2)
    dx = np.where(alive, cur_dx, out_of_frame).astype(np.float32)
    dy = np.where(alive, cur_dy, out_of_frame).astype(np.float32)
    return FlowField(dx, dy)


def load_pair_flow(pair: FramePair) -> FlowField:
    fields = [read_flo(p) for p in pair.flow_paths]
    return fields[0] if len(fields) == 1 else compose_flows(fields)


def _map_ordered(fn, items, workers: int) -> list:
    """Apply fn to items, preserving input order regardless of worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Refinement job


def _refined_map(pair: FramePair, config: JobConfig, space: ClassSpace) -> LabelMap:
    strategy = config.strategy
    pred_t = read_label_png(pair.pred_t_path, space)
    if strategy == "none":
        return pred_t
    if strategy == "oracle":
        if pair.gt_t_path is None:
            raise MissingInputError("oracle strategy requires ground-truth labels")
        gt = read_label_png(pair.gt_t_path, space)
        return refine_oracle(pred_t, gt)
    pred_tpk = read_label_png(pair.pred_tpk_path, space)
    flow = load_pair_flow(pair)
    if strategy == "consistency":
        return refine_consistency(pred_t, pred_tpk, flow)
    if strategy in ("warp_forward", "warp_backward"):
        return refine_warp_frame(pred_tpk, flow)
    # max_confidence
    conf_t = read_pfm(pair.conf_t_path)
    conf_tpk = read_pfm(pair.conf_tpk_path)
    return refine_max_confidence(pred_t, conf_t, pred_tpk, conf_tpk, flow)


def _enumerate_for_config(manifest: DatasetManifest, config: JobConfig) -> PairSet:
    k = config.effective_frame_distance
    if config.strategy in FLOW_STRATEGIES:
        return enumerate_pairs(
            manifest,
            k,
            config.pred_dir,
            config.conf_dir,
            config.split,
            config.flow_source,
        )
    # oracle and none operate on single labeled frames
    pairs = []
    for rec in manifest.labeled_records(config.split):
        p = prediction_path(config.pred_dir, rec.clip_id, rec.frame_index)
        pairs.append(
            FramePair(
                clip_id=rec.clip_id,
                t=rec.frame_index,
                k=0,
                pred_t_path=p,
                pred_tpk_path=p,
                flow_paths=(),
                gt_t_path=manifest.resolve(rec.label_path),
            )
        )
    return PairSet(pairs=tuple(pairs), skipped=0)


def run_refine_job(config: JobConfig) -> dict:
    """Refine every pair, write the refined PNGs, and return the run report.

    Per-pair failures are recorded and tolerated up to a 10% budget;
    beyond it the job reports status "failed".
    """
    if config.out_dir is None:
        raise MissingInputError("refine jobs require an output directory")
    manifest = load_manifest(config.manifest)
    space = config.class_space
    pair_set = _enumerate_for_config(manifest, config)
    out_dir = Path(config.out_dir)

    def work(pair: FramePair) -> dict:
        try:
            refined = _refined_map(pair, config, space)
            dest = out_dir / pair.clip_id / f"{pair.t:06d}.png"
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_label_png(refined, dest)
            retained_mask = refined.data != IGNORE_VALUE
            result = {
                "total": refined.data.size,
                "retained": int(np.count_nonzero(retained_mask)),
                "supervised_retained": 0,
                "correct_retained": 0,
                "has_gt": False,
            }
            if pair.gt_t_path is not None and pair.gt_t_path.exists():
                gt = read_label_png(pair.gt_t_path, space)
                check_same_shape(refined, gt)
                scored = retained_mask & (gt.data != IGNORE_VALUE)
                result["has_gt"] = True
                result["supervised_retained"] = int(np.count_nonzero(scored))
                result["correct_retained"] = int(
                    np.count_nonzero(scored & (refined.data == gt.data))
                )
            return result
        except (FlowsegError, OSError) as exc:
            return {"error": f"{type(exc).__name__}: {exc}"}

    results = _map_ordered(work, list(pair_set.pairs), config.workers)

    failures = [
        {"clip_id": p.clip_id, "frame_index": p.t, "error": r["error"]}
        for p, r in zip(pair_set.pairs, results)
        if "error" in r
    ]
    ok = [r for r in results if "error" not in r]
    total_px = sum(r["total"] for r in ok)
    retained_px = sum(r["retained"] for r in ok)
    sup_px = sum(r["supervised_retained"] for r in ok)
    correct_px = sum(r["correct_retained"] for r in ok)
    any_gt = any(r["has_gt"] for r in ok)
    pairs_total = len(pair_set.pairs)
    failed = len(failures)
    status = "ok"
    if pairs_total > 0 and failed / pairs_total > FAILURE_BUDGET:
        status = "failed"

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "job": "refine",
        "status": status,
        "strategy": config.strategy,
        "frame_distance": config.effective_frame_distance,
        "flow_source": config.flow_source,
        "seed": config.seed,
        "pairs_total": pairs_total,
        "pairs_processed": pairs_total - failed,
        "pairs_skipped": pair_set.skipped,
        "pairs_failed": failed,
        "failures": failures,
        "total_pixels": total_px,
        "retained_pixels": retained_px,
        "retained_fraction": round(retained_px / total_px, 6) if total_px else None,
        "retained_accuracy": (
            round(correct_px / sup_px, 6) if any_gt and sup_px else None
        ),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    return report


# ---------------------------------------------------------------------------
# Evaluation job


def run_eval_job(config: JobConfig) -> tuple[MetricReport, dict]:
    """Score predictions against manifest labels over one merged confusion matrix.

    Missing predictions are listed in the report and excluded; the metric
    covers the frames that were available.
    """
    manifest = load_manifest(config.manifest)
    space = config.class_space
    records = manifest.labeled_records(config.split)
    missing = []
    present = []
    for rec in records:
        p = prediction_path(config.pred_dir, rec.clip_id, rec.frame_index)
        if p.exists():
            present.append((rec, p))
        else:
            missing.append(f"{rec.clip_id}/{rec.frame_index:06d}")

    def work(item) -> ConfusionMatrix:
        rec, pred_path = item
        gt = read_label_png(manifest.resolve(rec.label_path), space)
        pred = read_label_png(pred_path, space)
        return confusion_accumulate(pred, gt, ConfusionMatrix.empty(space))

    parts = _map_ordered(work, present, config.workers)
    acc = ConfusionMatrix.empty(space)
    for part in parts:
        acc = merge(acc, part)
    universe = list(config.class_universe) if config.class_universe else None
    report = summarize(acc, universe)
    info = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "job": "eval",
        "frames_total": len(records),
        "frames_evaluated": len(present),
        "missing_predictions": missing,
        "coverage_warning": len(missing) > 0,
    }
    return report, info


# ---------------------------------------------------------------------------
# Temporal-consistency job

CONSIS_METRICS = ("predconsis", "warped", "consistency")


def run_consis_job(config: JobConfig, metric: str) -> tuple[MetricReport, dict]:
    """Aggregate one temporal metric over every pair at the configured distance.

    predconsis scores the warped neighbor prediction against the current
    prediction; warped scores it against ground truth; consistency scores
    the agreement-filtered map against ground truth and reports the
    retained fraction over all pixels.
    """
    if metric not in CONSIS_METRICS:
        raise ParameterError(f"unknown metric {metric!r}; expected one of {CONSIS_METRICS}")
    manifest = load_manifest(config.manifest)
    space = config.class_space
    pair_set = enumerate_pairs(
        manifest,
        config.frame_distance,
        config.pred_dir,
        config.conf_dir,
        config.split,
        config.flow_source,
    )

    def work(pair: FramePair):
        pred_tpk = read_label_png(pair.pred_tpk_path, space)
        flow = load_pair_flow(pair)
        retained = total = 0
        if metric == "predconsis":
            scored = propagate_labels(pred_tpk, flow).payload
            reference = read_label_png(pair.pred_t_path, space)
        elif metric == "warped":
            scored = propagate_labels(pred_tpk, flow).payload
            reference = read_label_png(pair.gt_t_path, space)
        else:
            pred_t = read_label_png(pair.pred_t_path, space)
            scored = refine_consistency(pred_t, pred_tpk, flow)
            reference = read_label_png(pair.gt_t_path, space)
            retained = int(np.count_nonzero(scored.data != IGNORE_VALUE))
            total = scored.data.size
        matrix = confusion_accumulate(scored, reference, ConfusionMatrix.empty(space))
        return matrix, retained, total

    results = _map_ordered(work, list(pair_set.pairs), config.workers)
    acc = ConfusionMatrix.empty(space)
    retained_px = 0
    total_px = 0
    for matrix, retained, total in results:
        acc = merge(acc, matrix)
        retained_px += retained
        total_px += total
    universe = list(config.class_universe) if config.class_universe else None
    report = summarize(acc, universe)
    if metric == "consistency" and total_px:
        report = dataclasses.replace(
            report, retained_fraction=retained_px / total_px
        )
    info = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "job": "consis",
        "metric": metric,
        "frame_distance": config.frame_distance,
        "flow_source": config.flow_source,
        "pairs": len(pair_set.pairs),
        "pairs_skipped": pair_set.skipped,
    }
    return report, info


# ---------------------------------------------------------------------------
# Frame-distance sweep

SWEEP_COLUMNS = (
    "k",
    "pl_warped_miou",
    "pl_warped_acc",
    "pl_consistency_miou",
    "pl_consistency_acc",
    "retained_fraction",
)


@dataclass(frozen=True)
class SweepRow:
    k: int
    available: bool
    pl_warped_miou: float | None = None
    pl_warped_acc: float | None = None
    pl_consistency_miou: float | None = None
    pl_consistency_acc: float | None = None
    retained_fraction: float | None = None
    pairs: int = 0
    skipped: int = 0

    def to_csv_cells(self) -> list[str]:
        if not self.available:
            return [str(self.k), "", "", "", "", ""]
        return [
            str(self.k),
            f"{self.pl_warped_miou:.2f}",
            f"{self.pl_warped_acc:.2f}",
            f"{self.pl_consistency_miou:.2f}",
            f"{self.pl_consistency_acc:.2f}",
            f"{self.retained_fraction:.4f}",
        ]


def sweep_to_csv(rows: list[SweepRow]) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    lines.extend(",".join(row.to_csv_cells()) for row in rows)
    return "\n".join(lines) + "\n"


def _sweep_one_k(manifest: DatasetManifest, config: JobConfig, k: int) -> SweepRow:
    pair_set = enumerate_pairs(
        manifest, k, config.pred_dir, config.conf_dir, config.split, config.flow_source
    )
    space = config.class_space
    if not pair_set.pairs:
        return SweepRow(k=k, available=False, skipped=pair_set.skipped)

    def work(pair: FramePair):
        pred_t = read_label_png(pair.pred_t_path, space)
        pred_tpk = read_label_png(pair.pred_tpk_path, space)
        gt = read_label_png(pair.gt_t_path, space)
        flow = load_pair_flow(pair)
        warped = propagate_labels(pred_tpk, flow).payload
        m_warped = confusion_accumulate(warped, gt, ConfusionMatrix.empty(space))
        filtered = refine_consistency(pred_t, pred_tpk, flow)
        m_consis = confusion_accumulate(filtered, gt, ConfusionMatrix.empty(space))
        retained = int(np.count_nonzero(filtered.data != IGNORE_VALUE))
        return m_warped, m_consis, retained, filtered.data.size

    results = _map_ordered(work, list(pair_set.pairs), config.workers)
    acc_warped = ConfusionMatrix.empty(space)
    acc_consis = ConfusionMatrix.empty(space)
    retained_px = 0
    total_px = 0
    for m_warped, m_consis, retained, total in results:
        acc_warped = merge(acc_warped, m_warped)
        acc_consis = merge(acc_consis, m_consis)
        retained_px += retained
        total_px += total
    universe = list(config.class_universe) if config.class_universe else None
    rep_warped = summarize(acc_warped, universe)
    rep_consis = summarize(acc_consis, universe)
    return SweepRow(
        k=k,
        available=True,
        pl_warped_miou=rep_warped.miou,
        pl_warped_acc=rep_warped.class_avg_acc,
        pl_consistency_miou=rep_consis.miou,
        pl_consistency_acc=rep_consis.class_avg_acc,
        retained_fraction=retained_px / total_px,
        pairs=len(pair_set.pairs),
        skipped=pair_set.skipped,
    )


def frame_distance_sweep(config: JobConfig, ks: list[int]) -> list[SweepRow]:
    """Aggregate warped and consistency metrics over all pairs, one row per k."""
    manifest = load_manifest(config.manifest)
    rows = []
    for k in ks:
        if k == 0:
            raise ParameterError("frame distance 0 is not part of a sweep")
        rows.append(_sweep_one_k(manifest, config, k))
    return rows
