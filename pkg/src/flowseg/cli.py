"""Command-line interface.

Subcommands: refine, eval, consis, sweep, rcs, synth. Exit codes follow a
strict contract: 0 success, 1 job failure, 2 usage error. Reports go to
stdout (CSV or JSON per --format); logs go to stderr. Every flag can also
be supplied through --config (a JSON object using JobConfig field names);
explicit flags beat config values, which beat built-in defaults.

Report schemas:
  * metric CSV: header "class,iou,acc", one row per class with 2-decimal
    percentages, then a "mean" summary row;
  * sweep CSV: header "k,pl_warped_miou,pl_warped_acc,
    pl_consistency_miou,pl_consistency_acc,retained_fraction", one row
    per requested frame distance (cells empty when flow is unavailable);
  * JSON reports carry a schema_version field.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .errors import FlowsegError
from .metrics import MetricReport
from .objectives import ClassFrequencies, rcs_distribution
from .pipeline import (
    CONSIS_METRICS,
    STRATEGIES,
    JobConfig,
    frame_distance_sweep,
    run_consis_job,
    run_eval_job,
    run_refine_job,
    sweep_to_csv,
)
from .synth import emit_dataset, load_world_spec

LOG = logging.getLogger("flowseg")

EXIT_OK = 0
EXIT_JOB_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return obj


class _Resolver:
    """Merges flag values over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config_file(getattr(args, "config", None))

    def get(self, key: str, default=None):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.config:
            return self.config[key]
        return default

    def require(self, key: str, flag: str):
        value = self.get(key)
        if value is None:
            raise UsageError(f"{flag} is required (flag or config)")
        return value


def _job_config(res: _Resolver, need_out_dir: bool = False) -> JobConfig:
    universe = res.get("class_universe")
    if isinstance(universe, str):
        universe = _parse_int_list(universe, "--classes")
    out_dir = res.get("out_dir")
    if need_out_dir and out_dir is None:
        raise UsageError("--out-dir is required")
    conf_dir = res.get("conf_dir")
    try:
        return JobConfig(
            manifest=Path(res.require("manifest", "--manifest")),
            pred_dir=Path(res.require("pred_dir", "--pred-dir")),
            out_dir=Path(out_dir) if out_dir is not None else None,
            conf_dir=Path(conf_dir) if conf_dir is not None else None,
            strategy=res.get("strategy", "consistency"),
            frame_distance=int(res.get("frame_distance", 1)),
            num_classes=int(res.get("num_classes", 19)),
            class_universe=tuple(universe) if universe else None,
            split=res.get("split"),
            flow_source=res.get("flow_source", "composed"),
            workers=int(res.get("workers", os.cpu_count() or 1)),
            seed=int(res.get("seed", 1)),
        )
    except FlowsegError as exc:
        raise UsageError(str(exc)) from exc


def _emit_report(report: MetricReport, info: dict, fmt: str, out: str | None) -> str:
    if fmt == "json":
        payload = dict(info)
        payload.update(report.to_json_dict())
        text = json.dumps(payload, indent=2) + "\n"
    else:
        text = report.to_csv()
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_refine(args) -> int:
    res = _Resolver(args)
    config = _job_config(res, need_out_dir=True)
    report = run_refine_job(config)
    sys.stdout.write(json.dumps(report, indent=2) + "\n")
    if report["status"] != "ok":
        LOG.error(
            "failure budget exceeded: %d of %d pairs failed",
            report["pairs_failed"],
            report["pairs_total"],
        )
        return EXIT_JOB_FAILURE
    return EXIT_OK


def _cmd_eval(args) -> int:
    res = _Resolver(args)
    config = _job_config(res)
    report, info = run_eval_job(config)
    if info["coverage_warning"]:
        LOG.warning(
            "%d of %d labeled frames had no prediction",
            len(info["missing_predictions"]),
            info["frames_total"],
        )
    fmt = res.get("format", "csv")
    sys.stdout.write(_emit_report(report, info, fmt, res.get("out")))
    return EXIT_OK


def _cmd_consis(args) -> int:
    res = _Resolver(args)
    config = _job_config(res)
    metric = res.require("metric", "--metric")
    if metric not in CONSIS_METRICS:
        raise UsageError(f"--metric must be one of {CONSIS_METRICS}, got {metric!r}")
    report, info = run_consis_job(config, metric)
    LOG.info("pairs=%d skipped=%d", info["pairs"], info["pairs_skipped"])
    fmt = res.get("format", "csv")
    sys.stdout.write(_emit_report(report, info, fmt, res.get("out")))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    res = _Resolver(args)
    config = _job_config(res)
    ks = res.require("ks", "--ks")
    if isinstance(ks, str):
        ks = _parse_int_list(ks, "--ks")
    rows = frame_distance_sweep(config, list(ks))
    text = sweep_to_csv(rows)
    out = res.get("out")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_rcs(args) -> int:
    res = _Resolver(args)
    freqs = res.require("freqs", "--freqs")
    if isinstance(freqs, str):
        freqs = _parse_float_list(freqs, "--freqs")
    temperature = float(res.get("temperature", 1.0))
    try:
        dist = rcs_distribution(ClassFrequencies(freqs, temperature))
    except FlowsegError as exc:
        raise UsageError(str(exc)) from exc
    payload = {
        "schema_version": 1,
        "temperature": temperature,
        "frequencies": [float(f) for f in freqs],
        "probabilities": [round(float(p), 10) for p in dist],
    }
    text = json.dumps(payload, indent=2) + "\n"
    out = res.get("out")
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_synth(args) -> int:
    res = _Resolver(args)
    spec_path = res.require("spec", "--spec")
    out_dir = res.require("out", "--out")
    try:
        spec = load_world_spec(spec_path)
    except (FlowsegError, OSError, json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"cannot load world spec {spec_path}: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        spec = dataclasses.replace(spec, seed=int(args.seed))
    clip_id = res.get("clip_id", "clip000")
    manifest_path = emit_dataset(spec, out_dir, clip_id=clip_id)
    payload = {
        "schema_version": 1,
        "manifest": str(manifest_path),
        "clip_id": clip_id,
        "frames": spec.num_frames,
        "seed": spec.seed,
    }
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_common_job_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--manifest", help="path to the JSONL dataset manifest")
    sub.add_argument("--pred-dir", dest="pred_dir", help="prediction PNG directory")
    sub.add_argument("--num-classes", dest="num_classes", type=int, help="label space size (default 19)")
    sub.add_argument("--split", choices=("train", "val"), help="restrict to one manifest split")
    sub.add_argument("--workers", type=int, help="worker threads (default: logical cores)")
    sub.add_argument("--seed", type=int, help="random seed (default 1)")
    sub.add_argument("--config", help="JSON config file; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowseg",
        description=(
            "Optical-flow label propagation, pseudo-label refinement, and "
            "temporal-consistency metrics over on-disk segmentation artifacts."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="run a pseudo-label refinement job")
    _add_common_job_flags(p)
    p.add_argument("--conf-dir", dest="conf_dir", help="confidence PFM directory")
    p.add_argument("--strategy", choices=STRATEGIES, help="refinement strategy")
    p.add_argument("--frame-distance", dest="frame_distance", type=int, help="signed frame distance k (default 1)")
    p.add_argument("--flow-source", dest="flow_source", choices=("composed", "direct"), help="how |k|>1 flow is obtained")
    p.add_argument("--out-dir", dest="out_dir", help="directory for refined PNGs and report.json")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="score predictions against manifest labels")
    _add_common_job_flags(p)
    p.add_argument("--classes", dest="class_universe", help="comma-separated class IDs to evaluate")
    p.add_argument("--format", choices=("csv", "json"), help="report format (default csv)")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("consis", help="temporal consistency metrics at one frame distance")
    _add_common_job_flags(p)
    p.add_argument("--frame-distance", dest="frame_distance", type=int, help="signed frame distance k (default 1)")
    p.add_argument("--metric", choices=CONSIS_METRICS, help="which temporal metric to compute")
    p.add_argument("--classes", dest="class_universe", help="comma-separated class IDs to evaluate")
    p.add_argument("--flow-source", dest="flow_source", choices=("composed", "direct"))
    p.add_argument("--format", choices=("csv", "json"), help="report format (default csv)")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=_cmd_consis)

    p = sub.add_parser("sweep", help="frame-distance sweep of the temporal metrics")
    _add_common_job_flags(p)
    p.add_argument("--ks", help="comma-separated frame distances, e.g. 1,3,6,10")
    p.add_argument("--classes", dest="class_universe", help="comma-separated class IDs to evaluate")
    p.add_argument("--flow-source", dest="flow_source", choices=("composed", "direct"))
    p.add_argument("--out", help="also write the CSV to this file")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("rcs", help="rare-class sampling probabilities")
    p.add_argument("--freqs", help="comma-separated per-class pixel proportions")
    p.add_argument("--temperature", type=float, help="softmax temperature (default 1.0)")
    p.add_argument("--out", help="also write the JSON to this file")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_rcs)

    p = sub.add_parser("synth", help="emit a synthetic video-shift dataset")
    p.add_argument("--spec", help="world-spec JSON file")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--clip-id", dest="clip_id", help="clip identifier (default clip000)")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlowsegError as exc:
        print(f"job error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_JOB_FAILURE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_JOB_FAILURE


if __name__ == "__main__":
    sys.exit(main())
