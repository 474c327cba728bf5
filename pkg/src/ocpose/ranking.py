"""Confidence-ranked keypoint AP: greedy matching, PR curves, mAP."""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .dataset_io import GTKind, Scene, SigmaTable
from .matcher import build_cost_matrix, ocpose_score, solve_transport
from .similarity import oks_pose_matrix, region_oks_batch
from .synthetic import inject_far_false_positives

OKS_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class Label(enum.IntEnum):
    FP = 0
    TP = 1
    IGNORED = 2


@dataclass(frozen=True)
class SceneSimilarities:
    """Per-image quantities needed for greedy matching at any OKS threshold."""

    pose_oks: np.ndarray  # (E, P) against GT poses
    region_oks: np.ndarray  # (E,) best OKS against any mask or crowd region
    scores: np.ndarray  # (E,) detection scores, descending

    @property
    def n_gt_poses(self) -> int:
        return self.pose_oks.shape[1]

    def head(self, n_det: int) -> SceneSimilarities:
        return SceneSimilarities(self.pose_oks[:n_det], self.region_oks[:n_det], self.scores[:n_det])


def scene_similarities(
    scene: Scene, sigmas: SigmaTable, region_mode: str = "mask", bbox_expand: float = 1.0
) -> SceneSimilarities:
    e = len(scene.detections)
    poses = [g for g in scene.gts if g.kind is GTKind.POSE]
    regions = [g for g in scene.gts if g.kind is not GTKind.POSE]
    scores = np.array([d.score for d in scene.detections], dtype=np.float64)
    if e == 0:
        return SceneSimilarities(np.zeros((0, len(poses))), np.zeros(0), scores)
    det = np.stack([d.keypoints for d in scene.detections])
    if poses:
        pose_oks = oks_pose_matrix(
            det, np.stack([g.keypoints for g in poses]), np.array([g.scale_s for g in poses]), sigmas
        )
    else:
        pose_oks = np.zeros((e, 0))
    region = np.full(e, -np.inf)
    for g in regions:
        region = np.maximum(region, region_oks_batch(det, g, sigmas, region_mode, bbox_expand))
    return SceneSimilarities(pose_oks, region, scores)


def greedy_labels(sims: SceneSimilarities, oks_threshold: float) -> list[Label]:
    """Label detections in their stored (descending score) order.

    Each detection claims its most similar unclaimed GT pose. Below threshold
    it is ignored if some mask or crowd region explains it, else it is a false
    positive. Because claims only flow downward in score, the labels of a
    score-sorted prefix do not depend on the detections after it.
    """
    free = np.ones(sims.n_gt_poses, dtype=bool)
    labels = []
    for i in range(sims.pose_oks.shape[0]):
        if free.any():
            row = np.where(free, sims.pose_oks[i], -np.inf)
            j = int(np.argmax(row))
            if row[j] >= oks_threshold:
                free[j] = False
                labels.append(Label.TP)
                continue
        labels.append(Label.IGNORED if sims.region_oks[i] >= oks_threshold else Label.FP)
    return labels


def greedy_match(
    scene: Scene,
    oks_threshold: float,
    sigmas: SigmaTable,
    region_mode: str = "mask",
    bbox_expand: float = 1.0,
) -> list[Label]:
    return greedy_labels(scene_similarities(scene, sigmas, region_mode, bbox_expand), oks_threshold)


@dataclass
class PrCurve:
    samples: list[tuple[float, float]]  # (recall, precision) after each ranked detection
    ap: float
    tp_count: int
    fp_count: int
    oks_threshold: float | None = None


def average_precision(
    ranked: Iterable[tuple[float, Label]],
    gt_pose_count: int,
    oks_threshold: float | None = None,
    interpolation: str = "envelope",
) -> PrCurve:
    """Interpolated AP over pooled ``(score, label)`` pairs.

    Pairs are ranked by descending score; the sort is stable, so equal scores
    keep their input order. Ignored detections are removed first.

    ``interpolation="envelope"`` integrates the right-to-left running max of
    precision over recall. ``"coco101"`` averages that envelope at 101 evenly
    spaced recall levels instead.
    """
    ranked = list(ranked)
    scores = np.array([s for s, _ in ranked], dtype=np.float64)
    labels = np.array([int(lab) for _, lab in ranked], dtype=np.int64)
    return ap_from_arrays(scores, labels, gt_pose_count, oks_threshold, interpolation)


def ap_from_arrays(
    scores: np.ndarray,
    labels: np.ndarray,
    gt_pose_count: int,
    oks_threshold: float | None = None,
    interpolation: str = "envelope",
) -> PrCurve:
    """Array form of :func:`average_precision` (labels as ``Label`` integer codes)."""
    keep = labels != Label.IGNORED
    scores, labels = scores[keep], labels[keep]
    order = np.argsort(-scores, kind="stable")
    is_tp = labels[order] == Label.TP
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    n = len(is_tp)
    tp_count, fp_count = (int(tp[-1]), int(fp[-1])) if n else (0, 0)
    if gt_pose_count == 0:
        ap = 1.0 if n == 0 else 0.0
        return PrCurve([(0.0, 0.0)] * n, ap, tp_count, fp_count, oks_threshold)
    if n == 0:
        return PrCurve([], 0.0, 0, 0, oks_threshold)

    recall = tp / gt_pose_count
    precision = tp / np.arange(1, n + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "envelope":
        steps = np.diff(np.concatenate(([0.0], recall)))
        ap = math.fsum((steps * envelope).tolist())  # exact sum: zero-width steps cannot perturb it
    elif interpolation == "coco101":
        levels = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, levels, side="left")
        picked = np.where(idx < n, envelope[np.minimum(idx, n - 1)], 0.0)
        ap = math.fsum(picked.tolist()) / len(levels)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    samples = list(zip(recall.tolist(), precision.tolist()))
    return PrCurve(samples, ap, tp_count, fp_count, oks_threshold)


def pooled_labels(
    sims_list: Sequence[SceneSimilarities], oks_threshold: float
) -> list[tuple[float, Label]]:
    """All detections of all images in (image, in-image rank) order."""
    out = []
    for sims in sims_list:
        out.extend(zip(sims.scores.tolist(), greedy_labels(sims, oks_threshold)))
    return out


@dataclass
class MapResult:
    map: float
    curves: dict[float, PrCurve]

    @property
    def ap_per_threshold(self) -> dict[float, float]:
        return {t: c.ap for t, c in self.curves.items()}


def mean_average_precision(
    sims_list: Sequence[SceneSimilarities],
    oks_thresholds: Sequence[float] = OKS_THRESHOLDS,
    interpolation: str = "envelope",
) -> MapResult:
    gt_count = sum(s.n_gt_poses for s in sims_list)
    curves = {
        t: average_precision(pooled_labels(sims_list, t), gt_count, t, interpolation) for t in oks_thresholds
    }
    return MapResult(float(np.mean([c.ap for c in curves.values()])), curves)


def evaluate_map(
    scenes: Sequence[Scene],
    sigmas: SigmaTable,
    region_mode: str = "mask",
    bbox_expand: float = 1.0,
    interpolation: str = "envelope",
) -> MapResult:
    sims = [scene_similarities(s, sigmas, region_mode, bbox_expand) for s in scenes]
    return mean_average_precision(sims, interpolation=interpolation)


@dataclass(frozen=True)
class InjectionReport:
    ap_before: float
    ap_after: float
    ocpose_before: float
    ocpose_after: float
    k: int


def fp_injection_experiment(
    scenes: Sequence[Scene],
    k: int,
    sigmas: SigmaTable,
    fp_score: float = 0.01,
    seed: int = 0,
    interpolation: str = "envelope",
) -> InjectionReport:
    """mAP and pooled OCpose before and after appending ``k`` far false positives.

    The injected poses sit beyond the pose-OKS far radius of every GT pose and
    score strictly below every existing detection.
    """
    lowest = min((d.score for s in scenes for d in s.detections), default=np.inf)
    if not fp_score < lowest:
        raise ValueError(f"fp_score {fp_score} must be below every real score (min {lowest})")

    def measure(ss):
        m = evaluate_map(ss, sigmas, interpolation=interpolation).map
        oc = ocpose_score([solve_transport(build_cost_matrix(s, sigmas)) for s in ss]).pooled
        return m, oc

    ap0, oc0 = measure(scenes)
    ap1, oc1 = measure(inject_far_false_positives(list(scenes), k, fp_score, sigmas, seed))
    return InjectionReport(ap0, ap1, oc0, oc1, k)
