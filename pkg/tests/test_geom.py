import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pillarkit.geom import (
    Box7,
    box_bev_corners,
    boxes_to_array,
    convex_intersection_area,
    iou_3d,
    iou_bev,
    iou_one_to_many,
    point_in_box,
    polygon_area,
    wrap_angle,
)

UNIT_SQUARE = np.array([(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)])


def random_box(rng, span=10.0):
    return Box7(
        rng.uniform(-span, span),
        rng.uniform(-span, span),
        rng.uniform(-2, 2),
        rng.uniform(0.5, 6.0),
        rng.uniform(0.5, 4.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(-math.pi, math.pi),
    )


def corners_as_set(corners):
    return {(round(x, 9), round(y, 9)) for x, y in corners}


class TestWrapAngle:
    def test_examples(self):
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2, abs=1e-15)
        assert wrap_angle(-math.pi) == math.pi

    def test_in_range_identity_is_bit_exact(self):
        values = np.nextafter(math.pi, 0), 1e-300, -3.141592, 0.25
        for v in values:
            assert wrap_angle(v) == v

    @given(st.floats(-1e6, 1e6))
    def test_result_in_interval(self, theta):
        wrapped = wrap_angle(theta)
        assert -math.pi < wrapped <= math.pi

    @given(st.floats(-50, 50), st.integers(-5, 5))
    def test_period_invariance(self, theta, k):
        a = wrap_angle(theta)
        b = wrap_angle(theta + 2 * math.pi * k)
        assert min(abs(a - b), abs(abs(a - b) - 2 * math.pi)) < 1e-9

    def test_array_input(self):
        out = wrap_angle(np.array([0.0, 3 * math.pi / 2, -math.pi]))
        assert np.allclose(out, [0.0, -math.pi / 2, math.pi])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            wrap_angle(math.nan)


class TestBox7:
    def test_normalizes_heading(self):
        assert Box7(0, 0, 0, 1, 1, 1, 3 * math.pi / 2).theta == pytest.approx(-math.pi / 2)

    def test_rejects_bad_sizes(self):
        for bad in [(0, 1, 1), (1, -2, 1), (1, 1, 0)]:
            with pytest.raises(ValueError):
                Box7(0, 0, 0, *bad, 0.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Box7(math.inf, 0, 0, 1, 1, 1, 0)

    def test_array_round_trip(self):
        box = Box7(1, 2, 3, 4, 2, 1.5, 0.3)
        assert Box7.from_array(box.as_array()) == box


class TestBevCorners:
    def test_axis_aligned(self):
        corners = box_bev_corners(Box7(0, 0, 0, 2, 1, 1, 0.0))
        assert corners_as_set(corners) == {(1, 0.5), (-1, 0.5), (-1, -0.5), (1, -0.5)}

    def test_quarter_turn(self):
        corners = box_bev_corners(Box7(0, 0, 0, 2, 1, 1, math.pi / 2))
        assert corners_as_set(corners) == {(0.5, 1), (-0.5, 1), (-0.5, -1), (0.5, -1)}

    def test_square_rotated_45(self):
        corners = box_bev_corners(Box7(1, 2, 0, 2, 2, 1, math.pi / 4))
        root2 = math.sqrt(2)
        expected = {(1 + root2, 2), (1, 2 + root2), (1 - root2, 2), (1, 2 - root2)}
        assert corners_as_set(corners) == corners_as_set(expected)

    def test_counterclockwise(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pts = box_bev_corners(random_box(rng))
            # signed shoelace is positive for CCW rings
            x, y = pts[:, 0], pts[:, 1]
            signed = np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))
            assert signed > 0


class TestIntersectionArea:
    def test_identity(self):
        assert convex_intersection_area(UNIT_SQUARE, UNIT_SQUARE) == 1.0

    def test_half_overlap(self):
        shifted = UNIT_SQUARE + (0.5, 0.0)
        assert convex_intersection_area(UNIT_SQUARE, shifted) == pytest.approx(0.5, abs=1e-12)

    def test_rotated_square_octagon(self):
        rotated = box_bev_corners(Box7(0, 0, 0, 1, 1, 1, math.pi / 4))
        area = convex_intersection_area(UNIT_SQUARE, rotated)
        assert area == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-12)

    def test_rotated_square_against_monte_carlo(self):
        rotated = box_bev_corners(Box7(0, 0, 0, 1, 1, 1, math.pi / 4))
        rng = np.random.default_rng(11)
        pts = rng.uniform(-0.5, 0.5, size=(1_000_000, 2))
        inside_rot = np.abs(pts[:, 0] + pts[:, 1]) <= math.sqrt(2) / 2
        inside_rot &= np.abs(pts[:, 0] - pts[:, 1]) <= math.sqrt(2) / 2
        estimate = inside_rot.mean()  # sample box is the unit square itself
        assert convex_intersection_area(UNIT_SQUARE, rotated) == pytest.approx(estimate, abs=3e-3)

    def test_disjoint(self):
        assert convex_intersection_area(UNIT_SQUARE, UNIT_SQUARE + (5, 5)) == 0.0

    def test_bounded_by_smaller_area(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = box_bev_corners(random_box(rng, span=2.0))
            b = box_bev_corners(random_box(rng, span=2.0))
            inter = convex_intersection_area(a, b)
            assert inter <= min(polygon_area(a), polygon_area(b)) + 1e-9

    def test_containment_equality(self):
        inner = UNIT_SQUARE * 0.25
        assert convex_intersection_area(inner, UNIT_SQUARE) == pytest.approx(
            polygon_area(inner), abs=1e-15
        )


class TestIouBev:
    def test_identical(self):
        box = Box7(3, -2, 0.5, 4.2, 1.9, 1.6, 0.77)
        assert iou_bev(box, box) == 1.0

    def test_disjoint(self):
        a = Box7(0, 0, 0, 2, 1, 1, 0.3)
        b = Box7(10, 10, 0, 2, 1, 1, -0.8)
        assert iou_bev(a, b) == 0.0

    def test_corner_overlap(self):
        a = Box7(0, 0, 0, 2, 1, 1, 0.0)
        b = Box7(0.5, 0.5, 0, 1, 1, 1, 0.0)  # overlap region area 0.5
        assert iou_bev(a, b) == pytest.approx(0.5 / (2 + 1 - 0.5), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            a = random_box(rng, span=3.0)
            b = random_box(rng, span=3.0)
            assert iou_bev(a, b) == pytest.approx(iou_bev(b, a), abs=1e-12)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            a = random_box(rng, span=3.0)
            b = random_box(rng, span=3.0)
            base = iou_bev(a, b)
            angle = rng.uniform(-math.pi, math.pi)
            tx, ty = rng.uniform(-20, 20, 2)
            moved = []
            for box in (a, b):
                c, s = math.cos(angle), math.sin(angle)
                moved.append(
                    Box7(
                        c * box.cx - s * box.cy + tx,
                        s * box.cx + c * box.cy + ty,
                        box.cz,
                        box.l,
                        box.w,
                        box.h,
                        box.theta + angle,
                    )
                )
            assert abs(iou_bev(*moved) - base) < 1e-9

    def test_half_turn_heading(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            a = random_box(rng)
            flipped = Box7(a.cx, a.cy, a.cz, a.l, a.w, a.h, a.theta + math.pi)
            assert iou_bev(a, flipped) == pytest.approx(1.0, abs=1e-12)


class TestIou3d:
    def test_identical(self):
        box = Box7(1, 1, 1, 2, 1.5, 1.2, -0.4)
        assert iou_3d(box, box) == 1.0

    def test_vertical_interval_overlap(self):
        a = Box7(0, 0, 0.0, 2, 2, 1, 0.0)  # z in [-0.5, 0.5]
        b = Box7(0, 0, 0.5, 2, 2, 1, 0.0)  # z in [0, 1]
        assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint_heights(self):
        a = Box7(0, 0, 0, 2, 2, 1, 0.0)
        b = Box7(0, 0, 5, 2, 2, 1, 0.0)
        assert iou_3d(a, b) == 0.0


class TestPointInBox:
    def test_center(self):
        box = Box7(1, 2, 3, 2, 1, 1, 0.7)
        assert point_in_box((1, 2, 3), box)

    def test_boundary_inclusive(self):
        box = Box7(0, 0, 0, 2, 1, 1, 0.0)
        assert point_in_box((1.0, 0.0, 0.0), box)
        assert point_in_box((0.0, 0.5, 0.0), box)
        assert point_in_box((0.0, 0.0, 0.5), box)

    def test_rotated_frame(self):
        box = Box7(0, 0, 0, 2, 1, 1, math.pi / 2)  # length now along Y
        assert not point_in_box((0.6, 0.0, 0.0), box)
        assert point_in_box((0.0, 0.6, 0.0), box)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(31)
        box = random_box(rng)
        pts = rng.uniform(-12, 12, size=(500, 3))
        batch = point_in_box(pts, box)
        for p, expected in zip(pts, batch):
            assert point_in_box(p, box) == expected


class TestIouOneToMany:
    @pytest.mark.parametrize("kind", ["bev", "3d"])
    def test_matches_scalar(self, kind):
        rng = np.random.default_rng(37)
        ref = random_box(rng, span=2.0)
        others = [random_box(rng, span=3.0) for _ in range(300)]
        batch = iou_one_to_many(ref, boxes_to_array(others), kind)
        scalar = iou_bev if kind == "bev" else iou_3d
        expected = np.array([scalar(ref, b) for b in others])
        assert np.max(np.abs(batch - expected)) < 1e-12

    def test_empty(self):
        ref = Box7(0, 0, 0, 1, 1, 1, 0)
        assert iou_one_to_many(ref, np.zeros((0, 7))).shape == (0,)

    def test_unknown_kind(self):
        ref = Box7(0, 0, 0, 1, 1, 1, 0)
        with pytest.raises(ValueError):
            iou_one_to_many(ref, boxes_to_array([ref]), "volumetric")
