"""COCO-format ground truth and keypoint results: loading, validation, writing."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, DataReferenceError, ParseError, SchemaError
from .masks import BBox, BinaryMask, mask_from_segmentation

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Per-joint constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaTable:
    """Per-joint falloff constants, one per keypoint.

    A joint at distance ``d`` from its target scores ``exp(-d**2 / (2 * area * c**2))``
    for its constant ``c``. COCO publishes sigmas at half these values; use
    :meth:`from_coco_sigmas` for tables written in that convention.
    """

    k: tuple[float, ...]

    def __post_init__(self):
        k = tuple(float(v) for v in self.k)
        if not k:
            raise ConfigError("sigma table is empty")
        if not all(math.isfinite(v) and v > 0 for v in k):
            raise ConfigError(f"sigma table entries must be positive and finite: {k}")
        object.__setattr__(self, "k", k)

    @classmethod
    def from_coco_sigmas(cls, sigmas: Iterable[float]) -> SigmaTable:
        return cls(tuple(2.0 * float(s) for s in sigmas))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.k, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.k)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(list(self.k)).encode()).hexdigest()[:16]


def _builtin_table(name: str) -> SigmaTable:
    text = resources.files("ocpose.data").joinpath(name).read_text()
    return SigmaTable(tuple(json.loads(text)))


def coco_sigmas() -> SigmaTable:
    """The 17-joint COCO table (default)."""
    return _builtin_table("coco17.json")


def crowdpose_sigmas() -> SigmaTable:
    return _builtin_table("crowdpose14.json")


def load_sigmas(path: str | Path) -> SigmaTable:
    """Read a sigma config.

    A bare JSON list holds the falloff constants directly. An object may instead carry
    ``{"k": [...]}`` or COCO-style ``{"sigmas": [...]}`` (doubled on load).
    """
    doc = _read_json(path)
    if isinstance(doc, list):
        return SigmaTable(tuple(doc))
    if isinstance(doc, dict):
        if "k" in doc:
            return SigmaTable(tuple(doc["k"]))
        if "sigmas" in doc:
            return SigmaTable.from_coco_sigmas(doc["sigmas"])
    raise ConfigError(f"{path}: expected a JSON list of floats or an object with 'k' or 'sigmas'")


# ---------------------------------------------------------------------------
# Scene types
# ---------------------------------------------------------------------------


class GTKind(str, enum.Enum):
    POSE = "pose"
    MASK = "mask"
    CROWD = "crowd"


@dataclass(frozen=True, eq=False)
class GroundTruthEntry:
    kind: GTKind
    area: float
    bbox: BBox | None = None
    keypoints: np.ndarray | None = None  # (N, 3): x, y, visibility
    mask: BinaryMask | None = None
    ann_id: Any = None

    def __post_init__(self):
        if not (self.area > 0 and math.isfinite(self.area)):
            raise SchemaError(f"annotation {self.ann_id}: area must be positive, got {self.area}")
        if self.kind is GTKind.POSE:
            if self.keypoints is None or self.mask is not None:
                raise SchemaError(f"annotation {self.ann_id}: pose entries carry keypoints only")
            if not (self.keypoints[:, 2] > 0).any():
                raise SchemaError(f"annotation {self.ann_id}: pose without labeled keypoints")
        elif self.mask is None or self.keypoints is not None:
            raise SchemaError(f"annotation {self.ann_id}: {self.kind.value} entries carry a mask only")

    @property
    def scale_s(self) -> float:
        return math.sqrt(self.area)

    @property
    def is_crowd(self) -> bool:
        return self.kind is GTKind.CROWD

    def __eq__(self, other):
        if not isinstance(other, GroundTruthEntry):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.area == other.area
            and self.bbox == other.bbox
            and self.ann_id == other.ann_id
            and _arrays_equal(self.keypoints, other.keypoints)
            and self.mask == other.mask
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DetectionPose:
    image_id: Any
    keypoints: np.ndarray  # (N, 3): x, y, confidence in [0, 1]
    score: float
    index: int = 0  # position in the source file; breaks score ties

    def __eq__(self, other):
        if not isinstance(other, DetectionPose):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.score == other.score
            and self.index == other.index
            and np.array_equal(self.keypoints, other.keypoints)
        )

    __hash__ = None


@dataclass(frozen=True)
class Scene:
    image_id: Any
    image_size: tuple[int, int]  # (height, width)
    gts: tuple[GroundTruthEntry, ...] = ()
    detections: tuple[DetectionPose, ...] = ()
    file_name: str | None = None

    def with_detections(self, detections: Iterable[DetectionPose]) -> Scene:
        return replace(self, detections=tuple(sort_detections(detections)))

    def filtered(self, threshold: float) -> Scene:
        return replace(self, detections=tuple(d for d in self.detections if d.score >= threshold))

    @property
    def num_gt_poses(self) -> int:
        return sum(g.kind is GTKind.POSE for g in self.gts)


def _arrays_equal(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return np.array_equal(a, b)


def sort_detections(dets: Iterable[DetectionPose]) -> list[DetectionPose]:
    return sorted(dets, key=lambda d: (-d.score, d.index))


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------


def _read_json(path: str | Path):
    raw = Path(path).read_bytes()
    return _parse_json_bytes(raw, str(path))


def _parse_json_bytes(raw: bytes, name: str):
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{name}: not UTF-8 at byte {exc.start}", exc.start) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"{name}: invalid JSON at byte offset {offset}: {exc.msg}", offset) from exc


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


@dataclass
class LoadSummary:
    """How annotations were partitioned on load."""

    kinds: Counter = field(default_factory=Counter)
    demoted: int = 0
    dropped: int = 0

    @property
    def total(self) -> int:
        return sum(self.kinds.values()) + self.dropped


def _person_category_ids(doc) -> set | None:
    cats = doc.get("categories") or []
    ids = {c.get("id") for c in cats if c.get("name") == "person"}
    return ids or None


def _reshape_keypoints(values, n: int, ann_id, what: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != 3 * n:
        got = len(values) if isinstance(values, list) else type(values).__name__
        raise SchemaError(f"{what} {ann_id}: keypoints must have length 3*{n}={3 * n}, got {got}")
    try:
        return np.asarray(values, dtype=np.float64).reshape(n, 3)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{what} {ann_id}: non-numeric keypoints") from exc


def _bbox_or_none(values) -> BBox | None:
    if not values or len(values) != 4:
        return None
    x, y, w, h = (float(v) for v in values)
    if w > 0 and h > 0:
        return BBox(x, y, w, h)
    return None


def parse_ground_truth(doc: dict, sigmas: SigmaTable) -> tuple[list[Scene], LoadSummary]:
    """Turn a decoded COCO keypoint annotation document into scenes."""
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise SchemaError("ground truth must be an object with 'images' and 'annotations'")
    n = len(sigmas)
    images = {}
    for img in doc["images"]:
        try:
            images[img["id"]] = (int(img["height"]), int(img["width"]), img.get("file_name"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"image entry {img!r} lacks id/height/width") from exc

    person_ids = _person_category_ids(doc)
    summary = LoadSummary()
    per_image: dict[Any, list[GroundTruthEntry]] = {k: [] for k in images}
    missing = []
    for idx, ann in enumerate(doc["annotations"]):
        ann_id = ann.get("id", idx)
        if person_ids is not None and ann.get("category_id") not in person_ids:
            continue
        image_id = ann.get("image_id")
        if image_id not in images:
            missing.append(image_id)
            continue
        h, w, _ = images[image_id]
        entry = _parse_annotation(ann, ann_id, (h, w), n, summary)
        if entry is not None:
            per_image[image_id].append(entry)
            summary.kinds[entry.kind] += 1
    if missing:
        raise DataReferenceError(
            f"annotations reference unknown image ids: {sorted(set(missing), key=str)}", missing
        )

    scenes = [
        Scene(image_id=k, image_size=(images[k][0], images[k][1]), gts=tuple(v), file_name=images[k][2])
        for k, v in sorted(per_image.items(), key=lambda kv: kv[0])
    ]
    return scenes, summary


def _parse_annotation(ann, ann_id, size, n, summary: LoadSummary) -> GroundTruthEntry | None:
    bbox = _bbox_or_none(ann.get("bbox"))
    mask = mask_from_segmentation(ann.get("segmentation"), size)
    area = ann.get("area")
    if area is None or not area > 0:
        area = bbox.w * bbox.h if bbox is not None else 0.0
    area = float(area)
    if not area > 0:
        summary.dropped += 1
        logger.warning("annotation %s: no positive area or bbox; dropped", ann_id)
        return None

    if ann.get("iscrowd", 0):
        if mask is None:
            summary.dropped += 1
            logger.warning("annotation %s: crowd region without segmentation; dropped", ann_id)
            return None
        return GroundTruthEntry(GTKind.CROWD, area, bbox, mask=mask, ann_id=ann_id)

    kp = ann.get("keypoints")
    if kp is not None and len(kp) > 0:
        kpts = _reshape_keypoints(kp, n, ann_id, "annotation")
        if (kpts[:, 2] > 0).any():
            return GroundTruthEntry(GTKind.POSE, area, bbox, keypoints=kpts, ann_id=ann_id)
        if mask is not None:
            summary.demoted += 1
    if mask is None:
        summary.dropped += 1
        logger.warning("annotation %s: no labeled keypoints and no segmentation; dropped", ann_id)
        return None
    return GroundTruthEntry(GTKind.MASK, area, bbox, mask=mask, ann_id=ann_id)


def load_ground_truth(path: str | Path, sigmas: SigmaTable) -> list[Scene]:
    scenes, summary = parse_ground_truth(_read_json(path), sigmas)
    logger.info(
        "%s: %d images; %d pose, %d mask, %d crowd entries; %d demoted, %d dropped",
        path,
        len(scenes),
        summary.kinds[GTKind.POSE],
        summary.kinds[GTKind.MASK],
        summary.kinds[GTKind.CROWD],
        summary.demoted,
        summary.dropped,
    )
    return scenes


def dump_ground_truth(scenes: Iterable[Scene], num_keypoints: int) -> dict:
    """Inverse of :func:`parse_ground_truth` up to entry partitioning."""
    images, annotations = [], []
    next_id = 1
    for scene in scenes:
        img = {"id": scene.image_id, "height": scene.image_size[0], "width": scene.image_size[1]}
        if scene.file_name is not None:
            img["file_name"] = scene.file_name
        images.append(img)
        for g in scene.gts:
            ann_id = g.ann_id if g.ann_id is not None else next_id
            next_id = max(next_id, ann_id + 1) if isinstance(ann_id, int) else next_id + 1
            if g.kind is GTKind.POSE:
                kpts = g.keypoints
                seg = []
            else:
                kpts = np.zeros((num_keypoints, 3))
                seg = g.mask.to_coco()
            ann = {
                "id": ann_id,
                "image_id": scene.image_id,
                "category_id": 1,
                "iscrowd": int(g.kind is GTKind.CROWD),
                "area": g.area,
                "keypoints": [_json_number(v) for v in kpts.ravel()],
                "num_keypoints": int((kpts[:, 2] > 0).sum()),
                "segmentation": seg,
            }
            if g.bbox is not None:
                ann["bbox"] = g.bbox.as_list()
            annotations.append(ann)
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person", "supercategory": "person"}],
    }


def _json_number(v: float):
    v = float(v)
    return int(v) if v.is_integer() else v


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------


@dataclass
class DetectionSet:
    by_image: dict[Any, list[DetectionPose]]
    num_keypoints: int | None
    n_total: int = 0
    n_rejected: int = 0
    threshold: float = 0.0

    @property
    def n_kept(self) -> int:
        return sum(len(v) for v in self.by_image.values())

    def filtered(self, threshold: float) -> DetectionSet:
        kept = {k: [d for d in v if d.score >= threshold] for k, v in self.by_image.items()}
        return DetectionSet(
            {k: v for k, v in kept.items() if v},
            self.num_keypoints,
            self.n_total,
            self.n_rejected,
            threshold,
        )


def parse_detections(doc, threshold: float = 0.0, num_keypoints: int | None = None) -> DetectionSet:
    if not isinstance(doc, list):
        raise SchemaError("detections must be a JSON array of result objects")
    by_image: dict[Any, list[DetectionPose]] = {}
    rejected = 0
    n = num_keypoints
    for idx, entry in enumerate(doc):
        kp = entry.get("keypoints") if isinstance(entry, dict) else None
        if not isinstance(kp, list) or "image_id" not in entry:
            raise SchemaError(f"detection #{idx}: missing image_id or keypoints")
        if n is None:
            if len(kp) % 3 or not kp:
                raise SchemaError(f"detection #{idx}: keypoint array length {len(kp)} is not 3*N")
            n = len(kp) // 3
        kpts = _reshape_keypoints(kp, n, f"#{idx}", "detection")
        try:
            score = float(entry.get("score", float("nan")))
        except (TypeError, ValueError):
            score = float("nan")
        if not math.isfinite(score) or not np.isfinite(kpts).all():
            rejected += 1
            continue
        if score < threshold:
            continue
        kpts[:, 2] = np.clip(kpts[:, 2], 0.0, 1.0)
        det = DetectionPose(entry["image_id"], kpts, score, idx)
        by_image.setdefault(det.image_id, []).append(det)
    if rejected:
        logger.warning("rejected %d detections with non-finite values", rejected)
    ordered = {k: sort_detections(by_image[k]) for k in sorted(by_image)}
    return DetectionSet(ordered, n, len(doc), rejected, threshold)


def load_detections(
    path: str | Path, threshold: float = 0.0, num_keypoints: int | None = None
) -> DetectionSet:
    """Read COCO keypoint results, dropping entries scored below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    return parse_detections(_read_json(path), threshold, num_keypoints)


def dump_detections(scenes: Iterable[Scene]) -> list[dict]:
    out = []
    for scene in scenes:
        for d in scene.detections:
            out.append(
                {
                    "image_id": scene.image_id,
                    "category_id": 1,
                    "keypoints": [_json_number(v) for v in d.keypoints.ravel()],
                    "score": d.score,
                }
            )
    return out


def attach_detections(scenes: Iterable[Scene], dets: DetectionSet) -> list[Scene]:
    scenes = list(scenes)
    known = {s.image_id for s in scenes}
    unknown = [k for k in dets.by_image if k not in known]
    if unknown:
        raise DataReferenceError(f"detections reference unknown image ids: {unknown}", unknown)
    return [s.with_detections(dets.by_image.get(s.image_id, ())) for s in scenes]


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj))
