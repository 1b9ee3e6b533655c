import math
import sys

import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from oracles import corner_iou, mc_iou
from sgselfsup.geometry import (BoundingBox, ValidationError, centroid, centroid_distance,
                                iou, iou_xywh, union_box)

coord = st.floats(0, 100, allow_nan=False, allow_infinity=False)
size = st.floats(0.01, 100, allow_nan=False, allow_infinity=False)
boxes = st.builds(BoundingBox, coord, coord, size, size)


def test_iou_identity_and_disjoint():
    b = BoundingBox(3.5, 2.0, 4.0, 7.25)
    assert iou(b, b) == 1.0
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(10, 10, 2, 2)) == 0.0


def test_iou_half_overlap_hand_value(rng):
    b1, b2 = BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)
    # intersection 2, union 6
    assert iou(b1, b2) == pytest.approx(1 / 3, abs=1e-15)
    assert mc_iou((0, 0, 2, 2), (1, 0, 2, 2), 10**6, rng) == pytest.approx(1 / 3, abs=1e-2)


def test_touching_boxes_have_zero_iou():
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(2, 0, 2, 2)) == 0.0


@given(boxes, boxes)
def test_iou_bounds_and_symmetry(b1, b2):
    v = iou(b1, b2)
    assert 0.0 <= v <= 1.0
    assert v == iou(b2, b1)


@given(boxes, boxes)
def test_iou_one_iff_equal(b1, b2):
    assert (iou(b1, b2) == 1.0) == (b1 == b2)


@given(boxes, boxes)
@example(BoundingBox(64.0, 0.0, 0.01, 0.01), BoundingBox(64.0, 0.0, 0.01, 0.01))
def test_vectorized_iou_matches_scalar(b1, b2):
    v = iou_xywh(b1.as_array()[None], b2.as_array()[None])[0]
    assert v == pytest.approx(iou(b1, b2), abs=1e-12)
    # corner form cancels in (x + w) - x; allow its rounding error
    coords = [*b1.as_array(), *b2.as_array()]
    slack = 8 * sys.float_info.epsilon * max(coords) / min(b1.w, b1.h, b2.w, b2.h)
    assert v == pytest.approx(corner_iou(tuple(b1.as_array()), tuple(b2.as_array())),
                              abs=1e-12 + slack)


def test_union_box_cases():
    b = BoundingBox(1.5, 2.5, 3.0, 4.0)
    assert union_box(b, b) == b
    assert union_box(BoundingBox(0, 0, 2, 2), BoundingBox(3, 4, 2, 2)) == BoundingBox(0, 0, 5, 6)
    outer = BoundingBox(0.1, 0.2, 9.7, 9.3)
    inner = BoundingBox(1.3, 2.9, 0.7, 1.1)
    assert union_box(inner, outer) == outer
    assert union_box(outer, inner) == outer


@given(boxes, boxes)
def test_union_box_contains_both(b1, b2):
    u = union_box(b1, b2)
    assert u == union_box(b2, b1)
    for b in (b1, b2):
        assert u.x <= b.x and u.y <= b.y
        assert u.x + u.w >= b.x2 - 1e-9 and u.y + u.h >= b.y2 - 1e-9
    assert u.area >= max(b1.area, b2.area) * (1 - 1e-12)


def test_centroid():
    assert centroid(BoundingBox(0, 0, 2, 2)) == (1, 1)
    assert centroid(BoundingBox(3, 4, 2, 2)) == (4, 5)
    W, H = 640.0, 480.0
    assert centroid(BoundingBox(0, 0, W, H)) == (W / 2, H / 2)


def test_centroid_distance(rng):
    b = BoundingBox(1, 2, 3, 4)
    assert centroid_distance(b, b) == 0.0
    # centroids (1, 1) and (4, 5)
    assert centroid_distance(BoundingBox(0, 0, 2, 2), BoundingBox(3, 4, 2, 2)) == 5.0
    for _ in range(100):
        b1 = BoundingBox(*rng.uniform(0, 50, 2), *rng.uniform(0.1, 50, 2))
        b2 = BoundingBox(*rng.uniform(0, 50, 2), *rng.uniform(0.1, 50, 2))
        cx1, cy1 = b1.x + b1.w / 2, b1.y + b1.h / 2
        cx2, cy2 = b2.x + b2.w / 2, b2.y + b2.h / 2
        assert centroid_distance(b1, b2) == pytest.approx(
            math.sqrt((cx1 - cx2) ** 2 + (cy1 - cy2) ** 2), rel=1e-12)


@given(boxes, boxes, boxes)
@settings(max_examples=200)
def test_centroid_distance_triangle_inequality(a, b, c):
    assert centroid_distance(a, c) <= centroid_distance(a, b) + centroid_distance(b, c) + 1e-9


@pytest.mark.parametrize("args", [(0, 0, 0, 1), (0, 0, 1, 0), (0, 0, -1, 1), (-1, 0, 1, 1),
                                  (0, -0.5, 1, 1), (0, 0, math.nan, 1)])
def test_invalid_boxes_rejected(args):
    with pytest.raises(ValidationError):
        BoundingBox(*args)


def test_subpixel_coordinates_allowed():
    b = BoundingBox(0.25, 0.125, 0.5, 0.75)
    assert b.area == 0.375
