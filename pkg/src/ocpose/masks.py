"""Binary masks, COCO segmentation decoding, and point-to-region distances.

Geometry convention: pixel ``(row, col)`` has its center at ``(x=col, y=row)``.
Every distance is measured between a query point and pixel centers.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DecodeError, GeometryError


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"bbox needs positive width and height, got {self}")

    def expand(self, factor: float) -> BBox:
        """Grow about the center; factor 3 reproduces the classic COCO ignore box."""
        if factor == 1.0:
            return self
        cx, cy = self.x + self.w / 2.0, self.y + self.h / 2.0
        w, h = self.w * factor, self.h * factor
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def decode_rle_array(counts: Sequence[int], size: Sequence[int]) -> np.ndarray:
    """Uncompressed COCO RLE -> dense bool array (column-major runs, background first)."""
    h, w = int(size[0]), int(size[1])
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise DecodeError("RLE counts must be non-negative")
    if int(counts.sum()) != h * w:
        raise DecodeError(f"RLE counts sum to {int(counts.sum())}, expected {h}*{w}={h * w}")
    values = (np.arange(counts.size) % 2).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


def encode_rle(array: np.ndarray) -> list[int]:
    flat = np.asarray(array, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def decode_compressed_counts(s: str | bytes) -> list[int]:
    """Decode the string form of COCO RLE counts (6-bit chunks, delta coded)."""
    if isinstance(s, bytes):
        s = s.decode("ascii")
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            if p >= len(s):
                raise DecodeError("truncated compressed RLE string")
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def _flat_vertices(vertices) -> np.ndarray:
    arr = np.asarray(vertices, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size % 2:
            raise GeometryError("flat polygon needs an even number of coordinates")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"polygon vertices have shape {arr.shape}")
    return arr


def rasterize_polygon_array(vertices, size: Sequence[int]) -> np.ndarray:
    """Even-odd fill; a pixel is set iff its center lies inside the polygon."""
    h, w = int(size[0]), int(size[1])
    pts = _flat_vertices(vertices)
    if len(pts) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(pts)}")
    out = np.zeros((h, w), dtype=bool)
    if h == 0 or w == 0:
        return out
    c0 = max(0, int(math.floor(pts[:, 0].min())))
    c1 = min(w - 1, int(math.ceil(pts[:, 0].max())))
    r0 = max(0, int(math.floor(pts[:, 1].min())))
    r1 = min(h - 1, int(math.ceil(pts[:, 1].max())))
    if c0 > c1 or r0 > r1:
        return out
    py, px = np.mgrid[r0 : r1 + 1, c0 : c1 + 1].astype(np.float64)
    inside = np.zeros(py.shape, dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for a, b, c, d in zip(x1, y1, x2, y2):
        if b == d:
            continue
        crosses = (b > py) != (d > py)
        xint = a + (py - b) * (c - a) / (d - b)
        inside ^= crosses & (px < xint)
    out[r0 : r1 + 1, c0 : c1 + 1] = inside
    return out


class BinaryMask:
    """Pixel mask stored densely, as RLE counts, or as polygons.

    The dense bit plane and the distance field are built lazily on first use
    and cached. Each cache is published with a single attribute assignment,
    so concurrent readers see either nothing or a finished array.
    """

    def __init__(self, height: int, width: int, *, dense=None, rle=None, polygons=None):
        self.height = int(height)
        self.width = int(width)
        given = sum(x is not None for x in (dense, rle, polygons))
        if given != 1:
            raise ValueError("exactly one of dense, rle, polygons must be given")
        self._rle = None if rle is None else [int(c) for c in rle]
        self._polygons = None if polygons is None else [_flat_vertices(p) for p in polygons]
        self._dense = None
        self._field = None
        self._fg = None
        if dense is not None:
            arr = np.asarray(dense, dtype=bool)
            if arr.shape != (self.height, self.width):
                raise DecodeError(f"mask shape {arr.shape} != ({self.height}, {self.width})")
            self._dense = arr
        elif self._rle is not None:
            if sum(self._rle) != self.height * self.width or min(self._rle, default=0) < 0:
                raise DecodeError(
                    f"RLE counts sum to {sum(self._rle)}, expected {self.height * self.width}"
                )
        else:
            for p in self._polygons:
                if len(p) < 3:
                    raise GeometryError(f"polygon needs at least 3 vertices, got {len(p)}")

    @classmethod
    def from_array(cls, array) -> BinaryMask:
        array = np.asarray(array, dtype=bool)
        return cls(array.shape[0], array.shape[1], dense=array)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def array(self) -> np.ndarray:
        if self._dense is None:
            if self._rle is not None:
                dense = decode_rle_array(self._rle, self.shape)
            else:
                dense = np.zeros(self.shape, dtype=bool)
                for poly in self._polygons:
                    dense |= rasterize_polygon_array(poly, self.shape)
            self._dense = dense
        return self._dense

    @property
    def area(self) -> int:
        return int(self.array.sum())

    @property
    def is_empty(self) -> bool:
        return not self.array.any()

    def distance_field(self) -> np.ndarray:
        """Per-pixel Euclidean distance to the nearest foreground pixel (inf if empty)."""
        if self._field is None:
            self._field = np.sqrt(kernels.edt_sq(self.array))
        return self._field

    def _foreground(self) -> np.ndarray:
        if self._fg is None:
            self._fg = np.argwhere(self.array).astype(np.float64)
        return self._fg

    def distance(self, points) -> np.ndarray:
        """Distances from ``points[..., (x, y)]`` to the mask.

        Each query snaps to the nearest pixel center first (halves round up).
        Queries that land outside the image are measured by a direct scan
        over the foreground pixels. Empty masks give ``inf``.
        """
        pts = np.asarray(points, dtype=np.float64)
        lead = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        out = np.empty(len(pts))
        if self.is_empty:
            out.fill(np.inf)
            return out.reshape(lead)
        col = np.floor(pts[:, 0] + 0.5)
        row = np.floor(pts[:, 1] + 0.5)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        if inside.any():
            field = self.distance_field()
            out[inside] = field[row[inside].astype(np.int64), col[inside].astype(np.int64)]
        if not inside.all():
            fg = self._foreground()
            for i in np.flatnonzero(~inside):
                d2 = (fg[:, 0] - row[i]) ** 2 + (fg[:, 1] - col[i]) ** 2
                out[i] = math.sqrt(d2.min())
        return out.reshape(lead)

    def clear_cache(self) -> None:
        """Drop derived arrays; a compact source (RLE/polygons) is kept."""
        self._field = None
        self._fg = None
        if self._rle is not None or self._polygons is not None:
            self._dense = None

    def to_coco(self):
        """COCO ``segmentation`` value: polygon list, or uncompressed RLE."""
        if self._polygons is not None:
            return [p.ravel().tolist() for p in self._polygons]
        counts = self._rle if self._rle is not None else encode_rle(self.array)
        return {"counts": list(counts), "size": [self.height, self.width]}

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.array, other.array)

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width})"


def decode_rle(counts: Sequence[int], size: Sequence[int]) -> BinaryMask:
    return BinaryMask(int(size[0]), int(size[1]), rle=counts)


def rasterize_polygon(vertices, size: Sequence[int]) -> BinaryMask:
    arr = rasterize_polygon_array(vertices, size)
    return BinaryMask.from_array(arr)


def rasterize_polygons(polygons, size: Sequence[int]) -> BinaryMask:
    """Union of several polygons (lazy)."""
    return BinaryMask(int(size[0]), int(size[1]), polygons=list(polygons))


def mask_from_segmentation(segmentation, size: Sequence[int]) -> BinaryMask | None:
    """Build a mask from any COCO segmentation value; ``None`` when there is none."""
    h, w = int(size[0]), int(size[1])
    if segmentation is None:
        return None
    if isinstance(segmentation, dict):
        rle_size = segmentation.get("size", [h, w])
        if [int(rle_size[0]), int(rle_size[1])] != [h, w]:
            raise DecodeError(f"RLE size {rle_size} does not match image size {[h, w]}")
        counts = segmentation.get("counts")
        if isinstance(counts, (str, bytes)):
            counts = decode_compressed_counts(counts)
        if counts is None:
            raise DecodeError("RLE segmentation without counts")
        return BinaryMask(h, w, rle=counts)
    if isinstance(segmentation, list):
        polys = [p for p in segmentation if len(p) > 0]
        if not polys:
            return None
        return BinaryMask(h, w, polygons=polys)
    raise DecodeError(f"unsupported segmentation type {type(segmentation).__name__}")


def distance_to_mask(point, mask: BinaryMask) -> float:
    return float(mask.distance(np.asarray(point, dtype=np.float64)))


def bbox_distances(points, box: BBox) -> np.ndarray:
    """Euclidean distance to the box; 0 inside and on the boundary."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    dx = np.maximum(np.maximum(box.x - x, x - (box.x + box.w)), 0.0)
    dy = np.maximum(np.maximum(box.y - y, y - (box.y + box.h)), 0.0)
    return np.hypot(dx, dy)


def distance_to_bbox(point, box: BBox) -> float:
    return float(bbox_distances(point, box))
