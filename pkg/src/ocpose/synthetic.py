"""Seeded synthetic scenes for tests, fixtures, and desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset_io import (
    DetectionPose,
    GroundTruthEntry,
    GTKind,
    Scene,
    SigmaTable,
    sort_detections,
)
from .errors import GenerationError
from .masks import BBox, BinaryMask, encode_rle

# COCO joint layout inside a unit person box (x across, y down)
_COCO_TEMPLATE = np.array(
    [
        [0.50, 0.08], [0.45, 0.06], [0.55, 0.06], [0.40, 0.08], [0.60, 0.08],
        [0.30, 0.22], [0.70, 0.22], [0.20, 0.38], [0.80, 0.38], [0.15, 0.52],
        [0.85, 0.52], [0.38, 0.55], [0.62, 0.55], [0.37, 0.75], [0.63, 0.75],
        [0.36, 0.95], [0.64, 0.95],
    ]
)  # fmt: skip

# body outline in the same unit box
_OUTLINE = np.array(
    [[0.35, 0.0], [0.65, 0.0], [0.9, 0.3], [0.9, 0.6], [0.7, 1.0], [0.3, 1.0], [0.1, 0.6], [0.1, 0.3]]
)

FAR_FACTOR = 20.0
FAR_MIN_SCALES = 10.0
MAX_TRIES = 2000
FP_TRIES = 64


@dataclass(frozen=True)
class SyntheticSpec:
    n_poses: int = 3
    n_masks: int = 0
    n_crowds: int = 0
    jitter: float = 0.0  # std (px) added to perfect copies
    n_duplicates: int = 0
    duplicate_jitter: float = 2.0
    duplicate_score: float = 0.3
    n_far_fp: int = 0
    fp_score: float = 0.05
    dets_in_crowds: int = 0  # detections placed fully inside crowd regions
    crowd_det_score: float = 0.4
    tp_score_range: tuple[float, float] = (0.5, 1.0)
    person_height: float = 60.0
    image_size: tuple[int, int] = (480, 640)
    num_keypoints: int = 17
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_poses, self.n_masks, self.n_crowds, self.n_duplicates, self.n_far_fp, self.dets_in_crowds)
        if min(counts) < 0:
            raise GenerationError("counts must be non-negative")
        if self.dets_in_crowds and not self.n_crowds:
            raise GenerationError("dets_in_crowds needs at least one crowd")


def _template(n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 17:
        return _COCO_TEMPLATE.copy()
    return rng.uniform(0.15, 0.85, size=(n, 2))


def _body(x: float, y: float, w: float, h: float, size) -> tuple[BinaryMask, list[float]]:
    poly = (_OUTLINE * [w, h] + [x, y]).ravel().tolist()
    return BinaryMask(size[0], size[1], polygons=[poly]), poly


def _polygon_area(flat: list[float]) -> float:
    p = np.asarray(flat).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _overlaps(box, boxes, margin):
    x, y, w, h = box
    for bx, by, bw, bh in boxes:
        if x < bx + bw + margin and bx < x + w + margin and y < by + bh + margin and by < y + bh + margin:
            return True
    return False


def _place(rng, size, w, h, boxes, margin=4.0):
    H, W = size
    if w >= W or h >= H:
        raise GenerationError(f"object of size {w:.0f}x{h:.0f} does not fit a {W}x{H} image")
    for _ in range(MAX_TRIES):
        x = float(rng.uniform(0, W - w - 1))
        y = float(rng.uniform(0, H - h - 1))
        if not _overlaps((x, y, w, h), boxes, margin):
            return x, y
    raise GenerationError(f"could not place a {w:.0f}x{h:.0f} object without overlap after {MAX_TRIES} tries")


def far_radius(gt: GroundTruthEntry, sigmas: SigmaTable) -> float:
    """Distance beyond which every pose-OKS term is at most exp(-FAR_FACTOR**2 / 2).

    Never less than ``FAR_MIN_SCALES`` object scales.
    """
    return gt.scale_s * max(FAR_FACTOR * max(sigmas.k), FAR_MIN_SCALES)


def is_far(keypoints: np.ndarray, gts, sigmas: SigmaTable) -> bool:
    for g in gts:
        if g.kind is not GTKind.POSE:
            continue
        d = np.linalg.norm(keypoints[:, None, :2] - g.keypoints[None, :, :2], axis=-1)
        if d.min() < far_radius(g, sigmas):
            return False
    return True


def far_false_positive(
    scene: Scene, score: float, rng: np.random.Generator, sigmas: SigmaTable, person_height: float = 60.0,
    index: int = 0,
) -> DetectionPose:
    """A pose whose every joint is far from every GT pose joint."""
    h, w = person_height, 0.4 * person_height
    H, W = scene.image_size
    tmpl = _template(len(sigmas), rng)
    for _ in range(FP_TRIES):
        x = float(rng.uniform(0, max(W - w - 1, 1)))
        y = float(rng.uniform(0, max(H - h - 1, 1)))
        kp = np.column_stack([tmpl * [w, h] + [x, y], np.ones(len(tmpl))])
        if is_far(kp, scene.gts, sigmas):
            return DetectionPose(scene.image_id, kp, float(score), index)
    # crowded image: park the pose past the right edge, clear of every GT joint
    poses = [g for g in scene.gts if g.kind is GTKind.POSE]
    reach = max((g.keypoints[:, 0].max() + far_radius(g, sigmas) for g in poses), default=0.0)
    x = max(float(W), float(reach)) + 1.0
    y = float(rng.uniform(0, max(H - h - 1, 1)))
    kp = np.column_stack([tmpl * [w, h] + [x, y], np.ones(len(tmpl))])
    if not is_far(kp, scene.gts, sigmas):
        raise GenerationError(f"image {scene.image_id}: no room for a far false positive")
    return DetectionPose(scene.image_id, kp, float(score), index)


def generate_synthetic_scene(spec: SyntheticSpec, image_id=1, sigmas: SigmaTable | None = None) -> Scene:
    """Ground truth plus perfect (and optionally perturbed) detections.

    GT poses, masks and crowds are placed without overlap. Each GT pose gets
    one detection that copies its keypoints with confidence 1, plus jitter
    if requested. Duplicates, far false positives and detections inside
    crowds are appended on top. The result depends only on ``spec``.
    """
    if sigmas is None:
        from .dataset_io import coco_sigmas

        sigmas = coco_sigmas() if spec.num_keypoints == 17 else SigmaTable((0.1,) * spec.num_keypoints)
    n = len(sigmas)
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    ph, pw = spec.person_height, 0.4 * spec.person_height
    boxes: list[tuple] = []
    gts: list[GroundTruthEntry] = []
    next_ann = 1

    for _ in range(spec.n_poses):
        x, y = _place(rng, size, pw, ph, boxes)
        boxes.append((x, y, pw, ph))
        kp = np.column_stack([_template(n, rng) * [pw, ph] + [x, y], np.full(n, 2.0)])
        _, poly = _body(x, y, pw, ph, size)
        gts.append(GroundTruthEntry(GTKind.POSE, _polygon_area(poly), BBox(x, y, pw, ph), keypoints=kp, ann_id=next_ann))
        next_ann += 1

    for _ in range(spec.n_masks):
        x, y = _place(rng, size, pw, ph, boxes)
        boxes.append((x, y, pw, ph))
        mask, poly = _body(x, y, pw, ph, size)
        gts.append(GroundTruthEntry(GTKind.MASK, _polygon_area(poly), BBox(x, y, pw, ph), mask=mask, ann_id=next_ann))
        next_ann += 1

    crowd_boxes = []
    for _ in range(spec.n_crowds):
        cw, ch = 3.0 * pw, 1.2 * ph
        x, y = _place(rng, size, cw, ch, boxes)
        boxes.append((x, y, cw, ch))
        crowd_boxes.append((x, y, cw, ch))
        dense = np.zeros(size, dtype=bool)
        r0, r1 = int(np.ceil(y)), int(np.floor(y + ch))
        c0, c1 = int(np.ceil(x)), int(np.floor(x + cw))
        dense[r0 : r1 + 1, c0 : c1 + 1] = True
        mask = BinaryMask(size[0], size[1], rle=encode_rle(dense))
        gts.append(GroundTruthEntry(GTKind.CROWD, float(dense.sum()), BBox(x, y, cw, ch), mask=mask, ann_id=next_ann))
        next_ann += 1

    lo, hi = spec.tp_score_range
    dets: list[DetectionPose] = []
    index = 0
    poses = [g for g in gts if g.kind is GTKind.POSE]
    for g in poses:
        kp = g.keypoints.copy()
        kp[:, 2] = 1.0
        if spec.jitter > 0:
            kp[:, :2] += rng.normal(0.0, spec.jitter, size=(n, 2))
        dets.append(DetectionPose(image_id, kp, float(rng.uniform(lo, hi)), index))
        index += 1
    for _ in range(spec.n_duplicates):
        if not poses:
            raise GenerationError("duplicates need at least one GT pose")
        g = poses[int(rng.integers(len(poses)))]
        kp = g.keypoints.copy()
        kp[:, 2] = 1.0
        kp[:, :2] += rng.normal(0.0, spec.duplicate_jitter, size=(n, 2))
        dets.append(DetectionPose(image_id, kp, float(spec.duplicate_score), index))
        index += 1
    for k in range(spec.dets_in_crowds):
        x, y, cw, ch = crowd_boxes[k % len(crowd_boxes)]
        # keep every joint on a crowd pixel center
        bx = float(rng.uniform(x + 1, x + cw - pw - 1))
        by = float(rng.uniform(y + 1, y + ch - ph - 1))
        kp = np.column_stack([_template(n, rng) * [pw, ph] + [bx, by], np.ones(n)])
        dets.append(DetectionPose(image_id, kp, float(spec.crowd_det_score), index))
        index += 1

    scene = Scene(image_id, (int(size[0]), int(size[1])), tuple(gts), ())
    for _ in range(spec.n_far_fp):
        dets.append(far_false_positive(scene, spec.fp_score, rng, sigmas, ph, index))
        index += 1
    return replace(scene, detections=tuple(sort_detections(dets)))


def generate_synthetic_dataset(spec: SyntheticSpec, n_images: int, sigmas: SigmaTable | None = None) -> list[Scene]:
    """``n_images`` scenes with ids 1..n; image ``i`` uses seed ``spec.seed + i``."""
    return [
        generate_synthetic_scene(replace(spec, seed=spec.seed + i), image_id=i, sigmas=sigmas)
        for i in range(1, n_images + 1)
    ]


def inject_far_false_positives(
    scenes: list[Scene], k: int, fp_score: float, sigmas: SigmaTable, seed: int = 0, person_height: float = 60.0
) -> list[Scene]:
    """Append ``k`` far false positives, spread round-robin over the scenes."""
    if not scenes:
        raise GenerationError("no scenes to inject into")
    rng = np.random.default_rng(seed)
    extra: list[list[DetectionPose]] = [[] for _ in scenes]
    base = 1 + max((d.index for s in scenes for d in s.detections), default=-1)
    for i in range(k):
        s = i % len(scenes)
        extra[s].append(far_false_positive(scenes[s], fp_score, rng, sigmas, person_height, base + i))
    return [s.with_detections(list(s.detections) + e) for s, e in zip(scenes, extra)]
