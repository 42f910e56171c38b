"""OTB-style sequence ingestion, tracking metrics, and benchmark persistence.

Ground truth uses the common on-disk convention: an img/ directory of
zero-padded frames plus groundtruth_rect.txt with one 1-indexed "l,t,w,h"
line per frame (comma, tab or space separated).  Metrics follow the dominant
toolkit conventions: center error thresholds are inclusive, overlap
thresholds strict, the success plot is sampled at 21 thresholds and AUC is
its arithmetic mean.  Benchmark output is deterministic byte-for-byte except
the timing sidecar, which holds every wall-clock measurement.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import BBox
from .pipeline import PipelineConfig, init, step

SCHEMA_VERSION = 1
OTB_ATTRIBUTES = frozenset(
    {"IV", "SV", "OCC", "DEF", "MB", "FM", "IPR", "OPR", "OV", "BC", "LR"})
PRECISION_THRESHOLDS = tuple(range(51))          # px, inclusive
SUCCESS_THRESHOLDS = tuple(np.linspace(0.0, 1.0, 21))  # overlap, strict
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class SequenceSpec:
    """One benchmark sequence: frames on disk plus per-frame ground truth."""

    name: str
    image_paths: tuple
    boxes: tuple
    attributes: frozenset = frozenset()

    def __post_init__(self):
        if len(self.image_paths) != len(self.boxes):
            raise ValueError(f"{self.name}: {len(self.image_paths)} frames but "
                             f"{len(self.boxes)} ground-truth boxes")
        if not self.image_paths:
            raise ValueError(f"{self.name}: empty sequence")
        bad = set(self.attributes) - OTB_ATTRIBUTES
        if bad:
            raise ValueError(f"{self.name}: unknown attribute codes {sorted(bad)}")

    @property
    def n_frames(self):
        return len(self.image_paths)


@dataclass
class TrackRun:
    """Predictions of one tracker on one sequence."""

    sequence: str
    tracker: str
    config_hash: str
    boxes: list
    frame_times: list | None = None   # seconds; timing never enters reports

    def __post_init__(self):
        if self.frame_times is not None and len(self.frame_times) != len(self.boxes):
            raise ValueError("one wall time per predicted box")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "sequence": self.sequence,
            "tracker": self.tracker,
            "config_hash": self.config_hash,
            "boxes": [[b.left, b.top, b.width, b.height] for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, data):
        boxes = [BBox(*row) for row in data["boxes"]]
        return cls(data["sequence"], data["tracker"], data["config_hash"], boxes)


@dataclass(frozen=True)
class MetricReport:
    """The center-error and overlap metric suite for one run."""

    mean_center_error: float
    distance_precision: float          # at 20 px, inclusive
    precision_plot: tuple              # 51 values, thresholds 0..50 px
    mean_overlap: float
    overlap_precision: float           # at 0.5, strict
    success_plot: tuple                # 21 values, thresholds 0..1
    auc: float

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "mean_center_error": self.mean_center_error,
            "distance_precision": self.distance_precision,
            "precision_plot": list(self.precision_plot),
            "mean_overlap": self.mean_overlap,
            "overlap_precision": self.overlap_precision,
            "success_plot": list(self.success_plot),
            "auc": self.auc,
        }


def load_frame(path):
    """Decode one 8-bit grayscale or RGB image to float pixels in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"could not decode image {path}")
    if raw.dtype != np.uint8:
        raise ValueError(f"unsupported bit depth {raw.dtype} in {path}; "
                         "only 8-bit images are supported")
    if raw.ndim == 3:
        if raw.shape[2] == 3:
            raw = raw[:, :, ::-1]  # BGR -> RGB
        else:
            raise ValueError(f"unsupported channel count {raw.shape[2]} in {path}")
    elif raw.ndim != 2:
        raise ValueError(f"unsupported image layout {raw.shape} in {path}")
    return raw.astype(np.float64) / 255.0


def _parse_groundtruth(text, origin):
    boxes = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = re.split(r"[,\s]+", line.strip())
        if len(parts) != 4:
            raise ValueError(f"{origin} line {i}: expected 4 fields, got {len(parts)}")
        try:
            l, t, w, h = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"{origin} line {i}: non-numeric field") from None
        boxes.append(BBox(l - 1.0, t - 1.0, w, h))  # 1-indexed on disk
    return boxes


def load_sequence(path) -> SequenceSpec:
    """Read an OTB-layout sequence directory.

    Attribute tags are read from an optional attributes.txt (whitespace or
    comma separated codes); missing file means no tags.
    """
    path = Path(path)
    img_dir = path / "img"
    gt_file = path / "groundtruth_rect.txt"
    if not img_dir.is_dir() or not gt_file.is_file():
        raise ValueError(f"{path} is not a sequence directory "
                         "(needs img/ and groundtruth_rect.txt)")
    images = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    boxes = _parse_groundtruth(gt_file.read_text(), gt_file.name)
    if len(images) != len(boxes):
        raise ValueError(f"{path}: {len(images)} images but {len(boxes)} "
                         "ground-truth lines")
    attrs = frozenset()
    attr_file = path / "attributes.txt"
    if attr_file.is_file():
        attrs = frozenset(re.split(r"[,\s]+", attr_file.read_text().strip()) or [])
        attrs = frozenset(a for a in attrs if a)
    return SequenceSpec(path.name, tuple(images), tuple(boxes), attrs)


def center_error(pred, gt):
    """Per-frame Euclidean center distance and its mean."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth boxes")
    if not pred:
        raise ValueError("empty box lists")
    errors = [float(np.hypot(p.center[0] - g.center[0], p.center[1] - g.center[1]))
              for p, g in zip(pred, gt)]
    return errors, float(np.mean(errors))


def distance_precision(errors, t_c=20.0):
    """Fraction of frames with center error <= t_c (inclusive)."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error list")
    return float(np.mean(errors <= t_c))


def iou(a: BBox, b: BBox):
    """General rectangle intersection over union; sizes may differ."""
    x0 = max(a.left, b.left)
    y0 = max(a.top, b.top)
    x1 = min(a.left + a.width, b.left + b.width)
    y1 = min(a.top + a.height, b.top + b.height)
    inter = max(0.0, x1 - x0) * max(0.0, y1 - y0)
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class OverlapMetrics:
    ious: tuple
    mean_overlap: float
    overlap_precision: float
    success_plot: tuple
    auc: float


def overlap_metrics(pred, gt, t_o=0.5) -> OverlapMetrics:
    """Overlap suite: per-frame IoU, strict precision, success plot, AUC."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth boxes")
    if not pred:
        raise ValueError("empty box lists")
    ious = np.array([iou(p, g) for p, g in zip(pred, gt)])
    success = tuple(float(np.mean(ious > t)) for t in SUCCESS_THRESHOLDS)
    return OverlapMetrics(tuple(float(v) for v in ious), float(ious.mean()),
                          float(np.mean(ious > t_o)), success,
                          float(np.mean(success)))


def metric_report(pred, gt) -> MetricReport:
    """Assemble the full report for one (prediction, ground truth) pair."""
    errors, mean_err = center_error(pred, gt)
    precision = tuple(distance_precision(errors, t) for t in PRECISION_THRESHOLDS)
    ov = overlap_metrics(pred, gt)
    return MetricReport(mean_err, distance_precision(errors, 20.0), precision,
                        ov.mean_overlap, ov.overlap_precision, ov.success_plot,
                        ov.auc)


def track_with_timing(spec: SequenceSpec, config: PipelineConfig) -> TrackRun:
    """Run one tracker over one sequence, timing each frame."""
    times = []
    t0 = time.perf_counter()
    state = init(load_frame(spec.image_paths[0]), spec.boxes[0], config)
    boxes = [state.box]
    times.append(time.perf_counter() - t0)
    for path in spec.image_paths[1:]:
        t0 = time.perf_counter()
        _, box = step(state, load_frame(path))
        boxes.append(box)
        times.append(time.perf_counter() - t0)
    return TrackRun(spec.name, config.kind, config.config_hash(), boxes, times)


def _mean_reports(reports):
    """Pointwise mean of MetricReports (the aggregate law)."""
    return MetricReport(
        float(np.mean([r.mean_center_error for r in reports])),
        float(np.mean([r.distance_precision for r in reports])),
        tuple(np.mean([r.precision_plot for r in reports], axis=0)),
        float(np.mean([r.mean_overlap for r in reports])),
        float(np.mean([r.overlap_precision for r in reports])),
        tuple(np.mean([r.success_plot for r in reports], axis=0)),
        float(np.mean([r.auc for r in reports])),
    )


def _write_json(path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_plot_csv(path, thresholds, values):
    lines = ["threshold,value"]
    lines += [f"{t},{v}" for t, v in zip(thresholds, values)]
    path.write_text("\n".join(lines) + "\n")


def run_benchmark(sequences, config: PipelineConfig, out_dir, workers=4):
    """Track every sequence, write runs/reports/plots, return the aggregate.

    Per-sequence failures are recorded in the aggregate and do not stop the
    run.  All output files are deterministic functions of the inputs except
    timing.json, which holds the wall-clock measurements.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = [s if isinstance(s, SequenceSpec) else load_sequence(s) for s in sequences]

    results, failures = {}, {}
    def run_one(spec):
        return track_with_timing(spec, config)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {spec.name: pool.submit(run_one, spec) for spec in specs}
    for spec in specs:
        try:
            results[spec.name] = (spec, futures[spec.name].result())
        except Exception as exc:  # recorded, run continues
            failures[spec.name] = f"{type(exc).__name__}: {exc}"

    reports, timing = {}, {}
    for name in sorted(results):
        spec, run = results[name]
        report = metric_report(run.boxes, list(spec.boxes))
        reports[name] = (spec, report)
        stem = f"{config.kind}_{name}"
        _write_json(out / f"{stem}_run.json", run.to_dict())
        _write_json(out / f"{stem}_report.json", report.to_dict())
        _write_plot_csv(out / f"{stem}_precision.csv", PRECISION_THRESHOLDS,
                        report.precision_plot)
        _write_plot_csv(out / f"{stem}_success.csv",
                        [f"{t:.2f}" for t in SUCCESS_THRESHOLDS], report.success_plot)
        timing[name] = {"frame_times": run.frame_times,
                        "total": float(np.sum(run.frame_times))}

    aggregate = {
        "schema_version": SCHEMA_VERSION,
        "tracker": config.kind,
        "config_hash": config.config_hash(),
        "n_sequences": len(reports),
        "failures": failures,
    }
    if reports:
        aggregate["mean"] = _mean_reports([r for _, r in reports.values()]).to_dict()
        by_attr = {}
        for attr in sorted(OTB_ATTRIBUTES):
            tagged = [r for s, r in reports.values() if attr in s.attributes]
            if tagged:
                by_attr[attr] = _mean_reports(tagged).to_dict()
        aggregate["by_attribute"] = by_attr
    else:
        aggregate["warning"] = "no sequences evaluated"
    _write_json(out / f"{config.kind}_aggregate.json", aggregate)
    _write_json(out / "timing.json", {"note": "wall-clock only; excluded from "
                                              "determinism guarantees",
                                      "sequences": timing})
    return aggregate


def evaluate_runs(runs_dir, dataset_dir, out_dir):
    """Recompute reports and aggregates from stored *_run.json predictions.

    Ground truth comes from the dataset directory (runs hold predictions
    only).  Produces the same report/plot/aggregate files as run_benchmark;
    no timing sidecar, since nothing is tracked.  Returns the aggregates
    keyed by tracker kind.
    """
    runs_dir, dataset, out = Path(runs_dir), Path(dataset_dir), Path(out_dir)
    run_files = sorted(runs_dir.glob("*_run.json"))
    if not run_files:
        raise ValueError(f"no *_run.json files in {runs_dir}")
    out.mkdir(parents=True, exist_ok=True)

    by_kind, failures = {}, {}
    for path in run_files:
        run = TrackRun.from_dict(json.loads(path.read_text()))
        entry = by_kind.setdefault(run.tracker, {"reports": {}, "hashes": set()})
        try:
            spec = load_sequence(dataset / run.sequence)
            if spec.n_frames != len(run.boxes):
                raise ValueError(f"{run.sequence}: run has {len(run.boxes)} boxes "
                                 f"for {spec.n_frames} frames")
            report = metric_report(run.boxes, list(spec.boxes))
        except Exception as exc:  # recorded, evaluation continues
            failures.setdefault(run.tracker, {})[run.sequence] = \
                f"{type(exc).__name__}: {exc}"
            continue
        entry["reports"][run.sequence] = (spec, report)
        entry["hashes"].add(run.config_hash)
        stem = f"{run.tracker}_{run.sequence}"
        _write_json(out / f"{stem}_report.json", report.to_dict())
        _write_plot_csv(out / f"{stem}_precision.csv", PRECISION_THRESHOLDS,
                        report.precision_plot)
        _write_plot_csv(out / f"{stem}_success.csv",
                        [f"{t:.2f}" for t in SUCCESS_THRESHOLDS], report.success_plot)

    aggregates = {}
    for kind in sorted(by_kind):
        reports = by_kind[kind]["reports"]
        hashes = sorted(by_kind[kind]["hashes"])
        aggregate = {
            "schema_version": SCHEMA_VERSION,
            "tracker": kind,
            "config_hash": hashes[0] if len(hashes) == 1
            else ("mixed" if hashes else "unknown"),
            "n_sequences": len(reports),
            "failures": failures.get(kind, {}),
        }
        if reports:
            pairs = [reports[name] for name in sorted(reports)]
            aggregate["mean"] = _mean_reports([r for _, r in pairs]).to_dict()
            by_attr = {}
            for attr in sorted(OTB_ATTRIBUTES):
                tagged = [r for s, r in pairs if attr in s.attributes]
                if tagged:
                    by_attr[attr] = _mean_reports(tagged).to_dict()
            aggregate["by_attribute"] = by_attr
        else:
            aggregate["warning"] = "no sequences evaluated"
        _write_json(out / f"{kind}_aggregate.json", aggregate)
        aggregates[kind] = aggregate
    return aggregates
