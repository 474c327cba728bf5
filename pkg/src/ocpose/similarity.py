"""Keypoint similarities between detected poses and ground-truth targets.

Four flavours share one Gaussian kernel ``exp(-d**2 / (2 * area * c**2))`` with a
per-joint falloff constant ``c``:

* pose OKS - distance to the GT keypoint, averaged over labeled joints;
* bbox OKS - distance to the box (0 inside), averaged over all joints;
* mask OKS - distance to the nearest mask pixel, scaled by the joint's share
  of the detection's total keypoint confidence, averaged over all joints;
* crowd OKS - mask OKS against a crowd region.

Batch functions take detection keypoints shaped ``(E, N, 3)`` and return
arrays; the single-pair functions wrap them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dataset_io import DetectionPose, GroundTruthEntry, GTKind, SigmaTable
from .masks import BBox, BinaryMask, bbox_distances


class SimilarityKind(str, enum.Enum):
    POSE = "pose_oks"
    BBOX = "bbox_oks"
    MASK = "mask_oks"
    CROWD = "crowd_oks"


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    kind: SimilarityKind


def _det_array(dets) -> np.ndarray:
    if isinstance(dets, DetectionPose):
        return dets.keypoints[None]
    if isinstance(dets, np.ndarray):
        return dets if dets.ndim == 3 else dets[None]
    dets = list(dets)
    if not dets:
        return np.zeros((0, 0, 3))
    return np.stack([d.keypoints for d in dets])


def _kernel(dist: np.ndarray, scale_s: float, k: np.ndarray) -> np.ndarray:
    return np.exp(-(dist**2) / (2.0 * scale_s**2 * k**2))


def oks_pose_matrix(dets, gt_keypoints: np.ndarray, scales: np.ndarray, sigmas: SigmaTable) -> np.ndarray:
    """Pose OKS for every (detection, GT pose) pair -> ``(E, G)``.

    Joints with visibility 0 are left out of both sum and count.
    """
    det = _det_array(dets)
    gt = np.asarray(gt_keypoints, dtype=np.float64).reshape(-1, len(sigmas), 3)
    e, g = det.shape[0], gt.shape[0]
    if e == 0 or g == 0:
        return np.zeros((e, g))
    k = sigmas.array
    scales = np.asarray(scales, dtype=np.float64)
    d2 = ((det[:, None, :, :2] - gt[None, :, :, :2]) ** 2).sum(-1)  # (E, G, N)
    expo = d2 / (2.0 * scales[None, :, None] ** 2 * k[None, None, :] ** 2)
    vis = gt[:, :, 2] > 0
    terms = np.where(vis[None], np.exp(-expo), 0.0)
    return terms.sum(-1) / vis.sum(-1)[None, :]


def confidence_weights(det_keypoints: np.ndarray) -> np.ndarray:
    """Each joint's share of the detection's keypoint confidence (uniform if all zero)."""
    c = np.asarray(det_keypoints, dtype=np.float64)[..., 2]
    total = c.sum(-1, keepdims=True)
    n = c.shape[-1]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, c / safe, 1.0 / n)


def weighted_region_oks(distances: np.ndarray, weights: np.ndarray, scale_s: float, sigmas: SigmaTable) -> np.ndarray:
    """Mean over joints of the kernel at ``distance * weight``; inf * 0 counts as 0."""
    with np.errstate(invalid="ignore"):
        scaled = np.where(weights == 0, 0.0, distances * weights)
    return _kernel(scaled, scale_s, sigmas.array).mean(-1)


def oks_mask_batch(dets, mask: BinaryMask, scale_s: float, sigmas: SigmaTable) -> np.ndarray:
    det = _det_array(dets)
    if det.shape[0] == 0:
        return np.zeros(0)
    dist = mask.distance(det[..., :2])
    return weighted_region_oks(dist, confidence_weights(det), scale_s, sigmas)


def oks_bbox_batch(dets, box: BBox, scale_s: float, sigmas: SigmaTable) -> np.ndarray:
    det = _det_array(dets)
    if det.shape[0] == 0:
        return np.zeros(0)
    dist = bbox_distances(det[..., :2], box)
    return _kernel(dist, scale_s, sigmas.array).mean(-1)


def oks_pose(det: DetectionPose, gt: GroundTruthEntry, sigmas: SigmaTable) -> SimilarityScore:
    if gt.kind is not GTKind.POSE:
        raise ValueError("oks_pose needs a pose entry")
    if not (gt.keypoints[:, 2] > 0).any():
        raise ValueError(f"annotation {gt.ann_id} has no labeled keypoints")
    value = oks_pose_matrix(det, gt.keypoints[None], np.array([gt.scale_s]), sigmas)[0, 0]
    return SimilarityScore(float(value), SimilarityKind.POSE)


def oks_bbox(det: DetectionPose, box: BBox, scale_s: float, sigmas: SigmaTable) -> SimilarityScore:
    value = oks_bbox_batch(det, box, scale_s, sigmas)[0]
    return SimilarityScore(float(value), SimilarityKind.BBOX)


def oks_mask(det: DetectionPose, mask: BinaryMask, scale_s: float, sigmas: SigmaTable) -> SimilarityScore:
    value = oks_mask_batch(det, mask, scale_s, sigmas)[0]
    return SimilarityScore(float(value), SimilarityKind.MASK)


def oks_crowd(det: DetectionPose, crowd_mask: BinaryMask, scale_s: float, sigmas: SigmaTable) -> SimilarityScore:
    value = oks_mask_batch(det, crowd_mask, scale_s, sigmas)[0]
    return SimilarityScore(float(value), SimilarityKind.CROWD)


def region_oks_batch(
    dets, gt: GroundTruthEntry, sigmas: SigmaTable, region_mode: str = "mask", bbox_expand: float = 1.0
) -> np.ndarray:
    """OKS of every detection against a mask or crowd entry.

    ``region_mode="bbox"`` scores against the (optionally expanded) box
    instead, the legacy treatment of unannotated people.
    """
    if region_mode == "bbox":
        box = gt.bbox if gt.bbox is not None else _mask_bbox(gt.mask)
        return oks_bbox_batch(dets, box.expand(bbox_expand), gt.scale_s, sigmas)
    if region_mode != "mask":
        raise ValueError(f"unknown region mode {region_mode!r}")
    return oks_mask_batch(dets, gt.mask, gt.scale_s, sigmas)


def _mask_bbox(mask: BinaryMask) -> BBox:
    rows, cols = np.nonzero(mask.array)
    if rows.size == 0:
        # any box works: the empty region is infinitely far in mask mode too
        return BBox(-1e12, -1e12, 1.0, 1.0)
    return BBox(float(cols.min()), float(rows.min()), float(cols.max() - cols.min() + 1), float(rows.max() - rows.min() + 1))


def pair_cost(
    det: DetectionPose,
    gt: GroundTruthEntry,
    sigmas: SigmaTable,
    region_mode: str = "mask",
    bbox_expand: float = 1.0,
) -> float:
    """Transport cost ``1 - OKS`` between one detection and one GT entry."""
    if gt.kind is GTKind.POSE:
        value = oks_pose(det, gt, sigmas).value
    else:
        value = float(region_oks_batch(det, gt, sigmas, region_mode, bbox_expand)[0])
    return float(np.clip(1.0 - value, 0.0, 1.0))
