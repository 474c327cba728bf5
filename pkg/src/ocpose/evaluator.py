"""End-to-end evaluation: reports, confidence-threshold sweeps, PR curves, method comparison."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .dataset_io import (
    DetectionSet,
    GTKind,
    Scene,
    SigmaTable,
    attach_detections,
    coco_sigmas,
    load_detections,
    load_ground_truth,
)
from .errors import ConfigError, UsageError
from .matcher import (
    CostMatrix,
    MatchPlan,
    build_cost_matrix,
    ocpose_score,
    solve_transport,
)
from .ranking import (
    OKS_THRESHOLDS,
    PrCurve,
    SceneSimilarities,
    ap_from_arrays,
    greedy_labels,
    scene_similarities,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SWEEP_GRID = tuple(round(0.01 * i, 2) for i in range(96))


@dataclass(frozen=True)
class EvalOptions:
    sigmas: SigmaTable = field(default_factory=coco_sigmas)
    region_mode: str = "mask"  # or "bbox"
    bbox_expand: float = 1.0
    exclude_crowd_matches: bool = False
    aggregation: str = "pooled"  # headline OCpose: "pooled" or "per-image"
    interpolation: str = "envelope"  # or "coco101"
    jobs: int = 1
    include_pairs: bool = True

    def __post_init__(self):
        if self.region_mode not in ("mask", "bbox"):
            raise UsageError(f"region mode must be 'mask' or 'bbox', got {self.region_mode!r}")
        if self.aggregation not in ("pooled", "per-image"):
            raise UsageError(f"aggregation must be 'pooled' or 'per-image', got {self.aggregation!r}")
        if self.interpolation not in ("envelope", "coco101"):
            raise UsageError(f"interpolation must be 'envelope' or 'coco101', got {self.interpolation!r}")
        if not self.bbox_expand > 0:
            raise UsageError("bbox expansion factor must be positive")
        if self.jobs < 1:
            raise UsageError("jobs must be at least 1")

    def echo(self) -> dict:
        return {
            "region_mode": self.region_mode,
            "bbox_expand": self.bbox_expand,
            "exclude_crowd_matches": self.exclude_crowd_matches,
            "aggregation": self.aggregation,
            "interpolation": self.interpolation,
            "oks_thresholds": list(OKS_THRESHOLDS),
            "num_keypoints": len(self.sigmas),
            "sigma_digest": self.sigmas.digest(),
            "solver": f"hungarian-{kernels.BACKEND}",
            "version": __version__,
        }


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Per-image preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedImage:
    """Everything threshold-independent about one image.

    Detections are score-sorted, so a confidence threshold keeps a prefix of
    the rows of ``costs`` and ``sims``.
    """

    scene: Scene
    costs: CostMatrix
    sims: SceneSimilarities
    labels: dict[float, np.ndarray]  # OKS threshold -> greedy labels over all detections
    _plans: dict[tuple, MatchPlan] = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        return self.sims.scores

    def n_kept(self, threshold: float) -> int:
        return int(np.count_nonzero(self.scores >= threshold))

    def plan(self, n_det: int, exclude_crowd_matches: bool) -> MatchPlan:
        key = (n_det, exclude_crowd_matches)
        if key not in self._plans:
            self._plans[key] = solve_transport(self.costs.head(n_det), exclude_crowd_matches)
        return self._plans[key]


def prepare_image(scene: Scene, options: EvalOptions) -> PreparedImage:
    costs = build_cost_matrix(scene, options.sigmas, options.region_mode, options.bbox_expand)
    sims = scene_similarities(scene, options.sigmas, options.region_mode, options.bbox_expand)
    # greedy labels of a score-sorted prefix equal the labels computed on the full list
    labels = {t: np.array(greedy_labels(sims, t), dtype=np.int64) for t in OKS_THRESHOLDS}
    for g in scene.gts:
        if g.mask is not None:
            g.mask.clear_cache()
    return PreparedImage(scene, costs, sims, labels)


def prepare(scenes: Sequence[Scene], options: EvalOptions) -> list[PreparedImage]:
    return _pmap(lambda s: prepare_image(s, options), list(scenes), options.jobs)


# ---------------------------------------------------------------------------
# AP over prepared images
# ---------------------------------------------------------------------------


def _curve_at(
    prepared: Sequence[PreparedImage], kept: Sequence[int], oks_t: float, interpolation: str
) -> PrCurve:
    scores = [p.scores[:n] for p, n in zip(prepared, kept)]
    labels = [p.labels[oks_t][:n] for p, n in zip(prepared, kept)]
    gt_count = sum(p.sims.n_gt_poses for p in prepared)
    if scores:
        flat_scores = np.concatenate(scores)
        flat_labels = np.concatenate(labels)
    else:
        flat_scores, flat_labels = np.zeros(0), np.zeros(0, np.int64)
    return ap_from_arrays(flat_scores, flat_labels, gt_count, oks_t, interpolation)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EvaluationReport:
    per_image: list[dict]
    aggregate: dict
    config_echo: dict
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_echo": self.config_echo,
            "aggregate": self.aggregate,
            "per_image": self.per_image,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def per_image_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "ocpose", "num_pairs", "pair_cost_sum", "fp", "fn", "num_detections"])
        for row in self.per_image:
            writer.writerow(
                [row["image_id"], row["ocpose"], row["num_pairs"], row["pair_cost_sum"], row["fp"], row["fn"], row["num_detections"]]
            )
        return buf.getvalue()


def _pair_record(pair, prepared: PreparedImage) -> dict:
    scene = prepared.scene
    if pair.gt is None:
        gt, kind = None, None
    else:
        entry = scene.gts[prepared.costs.gt_index[pair.gt]]
        gt, kind = entry.ann_id, entry.kind.value
    det = None if pair.det is None else scene.detections[pair.det].index
    return {"det": det, "gt": gt, "kind": kind, "cost": pair.cost}


def _report_at(
    prepared: Sequence[PreparedImage],
    threshold: float,
    options: EvalOptions,
    extra_echo: dict | None = None,
    with_pairs: bool = True,
) -> EvaluationReport:
    kept = [p.n_kept(threshold) for p in prepared]
    plans = _pmap(
        lambda pk: pk[0].plan(pk[1], options.exclude_crowd_matches), list(zip(prepared, kept)), options.jobs
    )
    per_image = []
    for p, n, plan in zip(prepared, kept, plans):
        row = {
            "image_id": p.scene.image_id,
            "ocpose": plan.ocpose,
            "num_pairs": plan.num_pairs,
            "pair_cost_sum": plan.pair_cost_sum,
            "fp": plan.false_positives,
            "fn": plan.false_negatives,
            "num_detections": n,
            "num_gt": {k.value: sum(g.kind is k for g in p.scene.gts) for k in GTKind},
        }
        if with_pairs and options.include_pairs:
            row["matched_pairs"] = [_pair_record(pair, p) for pair in plan.pi_one]
        per_image.append(row)

    agg = ocpose_score(plans) if plans else None
    curves = {t: _curve_at(prepared, kept, t, options.interpolation) for t in OKS_THRESHOLDS}
    pooled = agg.pooled if agg else 0.0
    mean = agg.per_image_mean if agg else 0.0
    aggregate = {
        "ocpose": pooled if options.aggregation == "pooled" else mean,
        "ocpose_pooled": pooled,
        "ocpose_per_image_mean": mean,
        "num_pairs": agg.num_pairs if agg else 0,
        "pair_cost_sum": agg.pair_cost_sum if agg else 0.0,
        "images_in_mean": agg.n_images if agg else 0,
        "map": float(np.mean([c.ap for c in curves.values()])),
        "ap_per_threshold": {f"{t:.2f}": c.ap for t, c in curves.items()},
        "total_fp": sum(r["fp"] for r in per_image),
        "total_fn": sum(r["fn"] for r in per_image),
        "num_images": len(per_image),
        "num_detections": sum(kept),
    }
    echo = {"threshold": threshold, **options.echo(), **(extra_echo or {})}
    return EvaluationReport(per_image, aggregate, echo)


def evaluate_scenes(scenes: Sequence[Scene], threshold: float = 0.0, options: EvalOptions | None = None) -> EvaluationReport:
    """Evaluate in-memory scenes (detections attached) at one confidence threshold."""
    options = options or EvalOptions()
    return _report_at(prepare(scenes, options), threshold, options)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_inputs(gt_path, det_path, options: EvalOptions) -> tuple[list[Scene], DetectionSet, dict]:
    scenes = load_ground_truth(gt_path, options.sigmas)
    dets = load_detections(det_path, 0.0)
    if dets.num_keypoints is not None and dets.num_keypoints != len(options.sigmas):
        raise ConfigError(
            f"detections have {dets.num_keypoints} keypoints but the sigma table has {len(options.sigmas)}"
        )
    scenes = attach_detections(scenes, dets)
    echo = {
        "gt_sha256": _file_digest(gt_path),
        "dt_sha256": _file_digest(det_path),
        "rejected_detections": dets.n_rejected,
    }
    return scenes, dets, echo


def _check_threshold(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"confidence threshold must lie in [0, 1], got {t}")
    return t


def evaluate(gt_path, det_path, threshold: float = 0.0, options: EvalOptions | None = None) -> EvaluationReport:
    """Load COCO ground truth and keypoint results and evaluate at one threshold.

    Images without detections count as all-miss; detections for images not in
    the ground truth raise :class:`~ocpose.errors.DataReferenceError`.
    """
    options = options or EvalOptions()
    threshold = _check_threshold(threshold)
    scenes, _, echo = _load_inputs(gt_path, det_path, options)
    scenes = [s.filtered(threshold) for s in scenes]
    return _report_at(prepare(scenes, options), threshold, options, echo)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    ocpose: float  # pooled
    ocpose_per_image_mean: float
    map: float
    kept_detections: int


@dataclass
class SweepResult:
    grid: list[SweepPoint]
    argmin_threshold: float
    argmin_ocpose: float
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_echo": self.config_echo,
            "argmin_threshold": self.argmin_threshold,
            "argmin_ocpose": self.argmin_ocpose,
            "grid": [asdict(p) for p in self.grid],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "ocpose", "ocpose_per_image_mean", "map", "kept_detections"])
        for p in self.grid:
            writer.writerow([p.threshold, p.ocpose, p.ocpose_per_image_mean, p.map, p.kept_detections])
        return buf.getvalue()


def sweep_prepared(prepared: Sequence[PreparedImage], grid: Iterable[float], options: EvalOptions) -> SweepResult:
    grid = sorted({_check_threshold(t) for t in grid})
    if not grid:
        raise UsageError("sweep grid is empty")
    points = []
    for t in grid:
        rep = _report_at(prepared, t, options, with_pairs=False)
        a = rep.aggregate
        points.append(SweepPoint(t, a["ocpose_pooled"], a["ocpose_per_image_mean"], a["map"], a["num_detections"]))
        logger.debug("threshold %.2f: ocpose %.4f map %.4f", t, a["ocpose_pooled"], a["map"])
    # strict < keeps the lowest threshold among ties
    best = points[0]
    for p in points[1:]:
        if p.ocpose < best.ocpose:
            best = p
    return SweepResult(points, best.threshold, best.ocpose, options.echo())


def sweep(gt_path, det_path, grid: Iterable[float] = DEFAULT_SWEEP_GRID, options: EvalOptions | None = None) -> SweepResult:
    """Re-evaluate at every confidence threshold of ``grid``; inputs are parsed once."""
    options = options or EvalOptions()
    scenes, _, echo = _load_inputs(gt_path, det_path, options)
    result = sweep_prepared(prepare(scenes, options), grid, options)
    result.config_echo.update(echo)
    return result


# ---------------------------------------------------------------------------
# PR curves
# ---------------------------------------------------------------------------


def pr_curves_prepared(
    prepared: Sequence[PreparedImage], thresholds: Iterable[float], options: EvalOptions
) -> dict[float, dict[float, PrCurve]]:
    out = {}
    for t in thresholds:
        t = _check_threshold(t)
        kept = [p.n_kept(t) for p in prepared]
        out[t] = {o: _curve_at(prepared, kept, o, options.interpolation) for o in OKS_THRESHOLDS}
    return out


def write_pr_curves(curves: dict[float, dict[float, PrCurve]], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for conf, by_oks in curves.items():
        for oks_t, curve in by_oks.items():
            path = out_dir / f"pr_conf{conf:.2f}_oks{oks_t:.2f}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["recall", "precision"])
                writer.writerows(curve.samples)
            written.append(path)
            rows.append([f"{conf:.2f}", f"{oks_t:.2f}", curve.ap, curve.tp_count, curve.fp_count])
    summary = out_dir / "pr_summary.csv"
    with summary.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["confidence_threshold", "oks_threshold", "ap", "tp_count", "fp_count"])
        writer.writerows(rows)
    written.append(summary)
    written.append(_plot_overlay(curves, out_dir / "pr_overlay.svg"))
    return written


def _plot_overlay(curves: dict[float, dict[float, PrCurve]], path: Path, oks_t: float = 0.5) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "ocpose", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for conf in sorted(curves, reverse=True):
            curve = curves[conf][oks_t]
            if curve.samples:
                r, p = zip(*([(0.0, curve.samples[0][1])] + curve.samples))
            else:
                r, p = (), ()
            ax.plot(r, p, label=f"conf>={conf:.2f}  AP={curve.ap:.3f}  FP={curve.fp_count}")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"precision-recall at OKS {oks_t:.2f}")
        ax.legend(loc="lower left", fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_pr_curves(gt_path, det_path, thresholds: Iterable[float], out_dir, options: EvalOptions | None = None) -> list[Path]:
    """One CSV per (confidence threshold, OKS threshold), a summary CSV, and an SVG overlay."""
    options = options or EvalOptions()
    scenes, _, _ = _load_inputs(gt_path, det_path, options)
    curves = pr_curves_prepared(prepare(scenes, options), thresholds, options)
    return write_pr_curves(curves, out_dir)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodRow:
    name: str
    map: float
    ocpose: float
    ocpose_per_image_mean: float
    total_fp: int
    total_fn: int


@dataclass
class ComparisonResult:
    rows: list[MethodRow]
    disagreements: list[tuple[str, str]]

    def to_text(self) -> str:
        width = max(len("method"), *(len(r.name) for r in self.rows))
        lines = [f"{'method':<{width}}  {'mAP':>7}  {'OCpose':>7}  {'FP':>6}  {'FN':>6}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.map:7.4f}  {r.ocpose:7.4f}  {r.total_fp:6d}  {r.total_fn:6d}")
        for a, b in self.disagreements:
            lines.append(f"rank disagreement: {a} vs {b} (mAP and OCpose order them differently)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "map", "ocpose", "ocpose_per_image_mean", "total_fp", "total_fn", "disagrees_with"])
        for r in self.rows:
            others = [b if a == r.name else a for a, b in self.disagreements if r.name in (a, b)]
            writer.writerow([r.name, r.map, r.ocpose, r.ocpose_per_image_mean, r.total_fp, r.total_fn, ";".join(others)])
        return buf.getvalue()


def _sign(x: float, eps: float = 1e-12) -> int:
    return 0 if abs(x) <= eps else (1 if x > 0 else -1)


def rank_disagreements(rows: Sequence[MethodRow]) -> list[tuple[str, str]]:
    """Pairs whose preference differs between mAP (higher wins) and OCpose (lower wins)."""
    flags = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            a, b = rows[i], rows[j]
            if _sign(a.map - b.map) != _sign(b.ocpose - a.ocpose):
                flags.append((a.name, b.name))
    return flags


def compare_reports(named: Sequence[tuple[str, EvaluationReport]]) -> ComparisonResult:
    rows = [
        MethodRow(
            name,
            rep.aggregate["map"],
            rep.aggregate["ocpose"],
            rep.aggregate["ocpose_per_image_mean"],
            rep.aggregate["total_fp"],
            rep.aggregate["total_fn"],
        )
        for name, rep in named
    ]
    return ComparisonResult(rows, rank_disagreements(rows))


def compare(gt_path, det_paths: Sequence, threshold: float = 0.0, options: EvalOptions | None = None) -> ComparisonResult:
    det_paths = list(det_paths)
    if len(det_paths) < 2:
        raise UsageError("compare needs at least two prediction files")
    options = options or EvalOptions()
    names = [Path(p).stem for p in det_paths]
    if len(set(names)) != len(names):
        names = [str(p) for p in det_paths]
    reports = [evaluate(gt_path, p, threshold, options) for p in det_paths]
    return compare_reports(list(zip(names, reports)))
