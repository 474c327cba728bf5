import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ocpose.errors import DecodeError, GeometryError
from ocpose.masks import (
    BBox,
    BinaryMask,
    decode_compressed_counts,
    decode_rle,
    distance_to_bbox,
    distance_to_mask,
    encode_rle,
    mask_from_segmentation,
    rasterize_polygon,
    rasterize_polygons,
)


def brute_distance(point, array):
    """Snap to the nearest pixel center, then scan every foreground pixel."""
    x, y = point
    c, r = math.floor(x + 0.5), math.floor(y + 0.5)
    best = math.inf
    for rr, cc in np.argwhere(array):
        best = min(best, math.sqrt((rr - r) ** 2 + (cc - c) ** 2))
    return best


# --- RLE -------------------------------------------------------------------


def test_rle_single_background_run():
    assert not decode_rle([4], (2, 2)).array.any()


def test_rle_leading_zero_run_is_all_foreground():
    assert decode_rle([0, 4], (2, 2)).array.all()


def test_rle_column_major():
    # flat column-major positions 1 and 2 are (row 1, col 0) and (row 0, col 1)
    expected = np.array([[0, 1], [1, 0]], bool)
    np.testing.assert_array_equal(decode_rle([1, 2, 1], (2, 2)).array, expected)


def test_rle_empty_image():
    assert decode_rle([], (0, 0)).array.shape == (0, 0)


def test_rle_bad_sum():
    with pytest.raises(DecodeError):
        decode_rle([1, 2], (2, 2))


@given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_rle_encode_decode_round_trip(arr):
    np.testing.assert_array_equal(decode_rle(encode_rle(arr), arr.shape).array, arr)


def test_compressed_counts_decode():
    # "0" encodes a single run of 0, deltas apply from the fourth count on
    assert decode_compressed_counts("0") == [0]
    assert decode_compressed_counts("52") == [5, 2]
    # 4th count is stored relative to the 2nd: '1' = 1 -> 2 + 1 = 3
    assert decode_compressed_counts("5221") == [5, 2, 2, 3]


def test_segmentation_dispatch():
    m = mask_from_segmentation({"counts": [1, 2, 1], "size": [2, 2]}, (2, 2))
    assert m.area == 2
    assert mask_from_segmentation([], (2, 2)) is None
    with pytest.raises(DecodeError):
        mask_from_segmentation({"counts": [4], "size": [4, 1]}, (2, 2))


# --- polygons --------------------------------------------------------------


def test_square_covers_nine_centers():
    verts = [(0.5, 0.5), (3.5, 0.5), (3.5, 3.5), (0.5, 3.5)]
    arr = rasterize_polygon(verts, (6, 6)).array
    # enumerate centers against the square directly
    expected = np.array([[0.5 < c < 3.5 and 0.5 < r < 3.5 for c in range(6)] for r in range(6)])
    np.testing.assert_array_equal(arr, expected)
    assert arr.sum() == 9


def test_degenerate_polygon_is_empty():
    assert rasterize_polygon([(0, 0), (2, 2), (4, 4)], (6, 6)).area == 0


def test_polygon_union():
    a = [(0.5, 0.5), (2.5, 0.5), (2.5, 2.5), (0.5, 2.5)]
    b = [(4.5, 4.5), (6.5, 4.5), (6.5, 6.5), (4.5, 6.5)]
    union = rasterize_polygons([np.ravel(a), np.ravel(b)], (8, 8)).array
    np.testing.assert_array_equal(union, rasterize_polygon(a, (8, 8)).array | rasterize_polygon(b, (8, 8)).array)
    assert union.sum() == 8


def test_polygon_needs_three_vertices():
    with pytest.raises(GeometryError):
        rasterize_polygon([(0, 0), (1, 1)], (3, 3))


def test_triangle_even_odd_against_half_plane_oracle():
    tri = [(1.3, 1.1), (9.7, 2.2), (4.1, 8.9)]
    arr = rasterize_polygon(tri, (12, 12)).array

    def inside(px, py):
        signs = []
        for (x1, y1), (x2, y2) in zip(tri, tri[1:] + tri[:1]):
            signs.append((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1))
        return all(s > 0 for s in signs) or all(s < 0 for s in signs)

    expected = np.array([[inside(c, r) for c in range(12)] for r in range(12)])
    np.testing.assert_array_equal(arr, expected)


# --- distances -------------------------------------------------------------


def test_point_on_foreground_is_zero():
    arr = np.zeros((5, 5), bool)
    arr[2, 3] = True
    assert distance_to_mask((3.2, 1.9), BinaryMask.from_array(arr)) == 0.0


def test_three_four_five():
    arr = np.zeros((20, 20), bool)
    arr[10, 10] = True
    assert distance_to_mask((13, 14), BinaryMask.from_array(arr)) == 5.0
    assert brute_distance((13, 14), arr) == 5.0


def test_empty_mask_is_infinite():
    assert distance_to_mask((1, 1), BinaryMask.from_array(np.zeros((3, 3), bool))) == math.inf


def test_outside_image_queries():
    arr = np.zeros((4, 4), bool)
    arr[0, 0] = True
    m = BinaryMask.from_array(arr)
    assert distance_to_mask((-3, -4), m) == 5.0
    assert distance_to_mask((10.4, 0), m) == 10.0


@settings(max_examples=60, deadline=None)
@given(
    arrays(bool, st.tuples(st.integers(1, 16), st.integers(1, 16))),
    st.floats(-6, 22, allow_nan=False),
    st.floats(-6, 22, allow_nan=False),
)
def test_distance_matches_brute_force(arr, x, y):
    m = BinaryMask.from_array(arr)
    assert distance_to_mask((x, y), m) == pytest.approx(brute_distance((x, y), arr), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    arrays(bool, st.tuples(st.integers(1, 10), st.integers(1, 10))),
    st.integers(0, 8),
    st.integers(0, 8),
    st.integers(0, 12),
    st.integers(0, 12),
)
def test_translation_invariance(arr, dr, dc, x, y):
    big = np.zeros((arr.shape[0] + dr, arr.shape[1] + dc), bool)
    big[dr:, dc:] = arr
    d0 = distance_to_mask((x, y), BinaryMask.from_array(arr))
    d1 = distance_to_mask((x + dc, y + dr), BinaryMask.from_array(big))
    assert d0 == d1


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.floats(0, 11), st.floats(0, 11))
def test_zero_set(arr, x, y):
    m = BinaryMask.from_array(arr)
    c, r = math.floor(x + 0.5), math.floor(y + 0.5)
    on_fg = r < arr.shape[0] and c < arr.shape[1] and arr[r, c]
    assert (distance_to_mask((x, y), m) == 0.0) == bool(on_fg)


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.data())
def test_superset_field_is_pointwise_smaller(arr, data):
    sub = arr & data.draw(arrays(bool, arr.shape))
    big_field = BinaryMask.from_array(arr).distance_field()
    sub_field = BinaryMask.from_array(sub).distance_field()
    assert (big_field <= sub_field).all()


def test_distance_field_zero_exactly_on_foreground():
    rng = np.random.default_rng(3)
    arr = rng.random((15, 11)) < 0.1
    field = BinaryMask.from_array(arr).distance_field()
    np.testing.assert_array_equal(field == 0, arr)
    assert np.isfinite(field).all() and (field >= 0).all()


def test_lazy_sources_decode_equal():
    arr = np.zeros((6, 5), bool)
    arr[1:4, 2:4] = True
    from_rle = BinaryMask(6, 5, rle=encode_rle(arr))
    assert from_rle == BinaryMask.from_array(arr)
    from_rle.clear_cache()
    assert from_rle.area == 6


# --- bbox ------------------------------------------------------------------

BOX = BBox(10.0, 20.0, 30.0, 40.0)


def test_bbox_inside_is_zero():
    assert distance_to_bbox((15, 25), BOX) == 0.0
    assert distance_to_bbox((10, 60), BOX) == 0.0


def test_bbox_left_edge():
    assert distance_to_bbox((7, 30), BOX) == 3.0


def test_bbox_corner():
    assert distance_to_bbox((43, 64), BOX) == 5.0


def test_bbox_expand_about_center():
    e = BOX.expand(3.0)
    assert (e.x, e.y, e.w, e.h) == (-20.0, -20.0, 90.0, 120.0)
    with pytest.raises(GeometryError):
        BBox(0, 0, 0, 1)
