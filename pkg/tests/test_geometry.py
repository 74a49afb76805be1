"""Geometry primitives: frames, polylines, projection, overlap tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialflow.geometry import (
    DegeneratePath,
    DynamicVector,
    EmptyPolyline,
    OrientedBox,
    PathArrays,
    Polyline,
    PolylineKind,
    Pose2D,
    SpacingViolation,
    StaticVector,
    boxes_overlap,
    norm_angle,
    points_in_polygons,
    project_onto_path,
    transform_from_frame,
    transform_to_frame,
)

finite_angle = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestNormAngle:
    def test_axis_values(self):
        assert norm_angle(0.0) == 0.0
        assert norm_angle(math.pi) == pytest.approx(math.pi)
        # The convention is (-pi, pi]: -pi maps to +pi.
        assert norm_angle(-math.pi) == pytest.approx(math.pi)
        assert norm_angle(3 * math.pi) == pytest.approx(math.pi)
        assert norm_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-12)

    @given(finite_angle)
    def test_range_and_equivalence(self, theta):
        out = norm_angle(theta)
        assert -math.pi < out <= math.pi
        assert math.cos(out) == pytest.approx(math.cos(theta), abs=1e-6)
        assert math.sin(out) == pytest.approx(math.sin(theta), abs=1e-6)


class TestFrames:
    def test_known_transform(self):
        # Point one unit left of a frame looking along +y lands on the
        # frame's +x axis: (1,1,pi/2) seen from (1,0,pi/2) is (1,0,0).
        point = Pose2D(1.0, 1.0, math.pi / 2)
        frame = Pose2D(1.0, 0.0, math.pi / 2)
        local = transform_to_frame(point, frame)
        assert local.x == pytest.approx(1.0, abs=1e-12)
        assert local.y == pytest.approx(0.0, abs=1e-12)
        assert local.theta == pytest.approx(0.0, abs=1e-12)

    @given(
        st.tuples(*[st.floats(-100, 100) for _ in range(2)], finite_angle),
        st.tuples(*[st.floats(-100, 100) for _ in range(2)], finite_angle),
    )
    def test_round_trip(self, p, f):
        point = Pose2D(*p)
        frame = Pose2D(*f)
        back = transform_from_frame(transform_to_frame(point, frame), frame)
        assert back.x == pytest.approx(point.x, abs=1e-6)
        assert back.y == pytest.approx(point.y, abs=1e-6)
        assert math.cos(back.theta) == pytest.approx(math.cos(point.theta), abs=1e-9)
        assert math.sin(back.theta) == pytest.approx(math.sin(point.theta), abs=1e-9)


def _static_line(points, kind=PolylineKind.CENTERLINE, **kw):
    vecs = [StaticVector(x, y, 0.0, 4.0, i) for i, (x, y) in enumerate(points)]
    return Polyline(kind, vecs, **kw)


class TestPolyline:
    def test_empty_rejected(self):
        with pytest.raises(EmptyPolyline):
            Polyline(PolylineKind.CENTERLINE, [])

    def test_spacing_violation(self):
        with pytest.raises(SpacingViolation):
            _static_line([(0, 0), (2.5, 0)])

    def test_spacing_boundary_ok(self):
        _static_line([(0, 0), (2.0, 0)])  # exactly the limit

    def test_history_exempt_from_spacing(self):
        vecs = [DynamicVector(0.0, 0.0, 0.0, 1.0, 1.0), DynamicVector(9.0, 0.0, 0.0, 1.0, 1.0)]
        Polyline(PolylineKind.AGENT_HISTORY, vecs)

    def test_indices_must_increase(self):
        vecs = [
            StaticVector(0.0, 0.0, 0.0, 4.0, 0),
            StaticVector(1.0, 0.0, 0.0, 4.0, 0),
        ]
        with pytest.raises(ValueError):
            Polyline(PolylineKind.CENTERLINE, vecs)

    def test_kind_order_for_observation_sorting(self):
        assert PolylineKind.CENTERLINE < PolylineKind.SIDELINE < PolylineKind.GLOBAL_PATH


class TestProjection:
    def test_straight_path(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [10.0, 0.0]]))
        proj = arrays.project(3.0, -0.5)
        assert proj.arclength == pytest.approx(3.0, abs=1e-12)
        # Point to the right of an eastbound segment: negative lateral.
        assert proj.lateral_offset == pytest.approx(-0.5, abs=1e-12)
        assert proj.segment_heading == pytest.approx(0.0)

    def test_left_positive(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [0.0, 10.0]]))  # northbound
        proj = arrays.project(-1.0, 4.0)
        assert proj.lateral_offset == pytest.approx(1.0, abs=1e-12)
        assert proj.arclength == pytest.approx(4.0, abs=1e-12)

    def test_endpoint_clamp(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [10.0, 0.0]]))
        proj = arrays.project(12.0, 1.0)
        assert proj.arclength == pytest.approx(10.0)
        assert proj.lateral_offset == pytest.approx(1.0)

    def test_corner_tie_breaks_low(self):
        # Equidistant from both legs of a right angle: lowest arclength wins.
        arrays = PathArrays(np.array([[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]]))
        proj = arrays.project(4.0, 1.0)
        assert proj.arclength == pytest.approx(4.0)

    def test_zero_length_segments_dropped(self):
        with_dup = PathArrays(np.array([[0.0, 0.0], [5.0, 0.0], [5.0, 0.0], [5.0, 5.0]]))
        plain = PathArrays(np.array([[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]]))
        for p in [(1.0, 2.0), (5.5, 3.0), (7.0, -1.0)]:
            a = with_dup.project(*p)
            b = plain.project(*p)
            assert a.arclength == b.arclength
            assert a.lateral_offset == b.lateral_offset

    def test_degenerate_rejected(self):
        with pytest.raises(DegeneratePath):
            PathArrays(np.array([[1.0, 1.0]]))
        with pytest.raises(DegeneratePath):
            PathArrays(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_point_at_interpolates_and_clamps(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]))
        x, y, h = arrays.point_at(12.0)
        assert (x, y) == pytest.approx((10.0, 2.0))
        assert h == pytest.approx(math.pi / 2)
        x, y, _ = arrays.point_at(-5.0)
        assert (x, y) == pytest.approx((0.0, 0.0))
        x, y, _ = arrays.point_at(999.0)
        assert (x, y) == pytest.approx((10.0, 10.0))

    @given(
        st.floats(-20, 40),
        st.floats(-20, 40),
        st.integers(min_value=0, max_value=7),
        st.integers(min_value=1, max_value=4),
    )
    @settings(max_examples=200)
    def test_window_covering_argmin_matches_full(self, px, py, lo, span):
        # A window that contains the global argmin returns the global result.
        pts = np.array(
            [[0.0, 0.0], [4.0, 0.0], [8.0, 1.0], [12.0, 3.0], [14.0, 6.0],
             [14.0, 10.0], [12.0, 13.0], [9.0, 15.0], [5.0, 15.0]]
        )
        arrays = PathArrays(pts)
        s, lat, head, k = arrays.project_window(px, py, 0, arrays.n_seg)
        hi = min(arrays.n_seg, lo + span)
        if lo <= k < hi:
            s2, lat2, head2, k2 = arrays.project_window(px, py, lo, hi)
            assert (s2, lat2, head2, k2) == (s, lat, head, k)

    def test_project_onto_path_accepts_polyline(self):
        line = _static_line([(0, 0), (2, 0), (4, 0)])
        proj = project_onto_path((1.0, 1.0), line)
        assert proj.arclength == pytest.approx(1.0)
        assert proj.lateral_offset == pytest.approx(1.0)


class TestOrientedBox:
    def test_axis_aligned_corners(self):
        box = OrientedBox(Pose2D(0.0, 0.0, 0.0), 4.0, 2.0)
        corners = box.corners()
        assert corners.shape == (4, 2)
        expect = {(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)}
        got = {(round(x, 9), round(y, 9)) for x, y in corners}
        assert got == expect
        # Counterclockwise winding (positive shoelace area).
        x, y = corners[:, 0], corners[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area == pytest.approx(8.0)

    def test_overlap_and_separation(self):
        a = OrientedBox(Pose2D(0.0, 0.0, 0.0), 4.0, 2.0)
        assert boxes_overlap(a, OrientedBox(Pose2D(3.0, 0.0, 0.0), 4.0, 2.0))
        # Exactly touching counts as contact.
        assert boxes_overlap(a, OrientedBox(Pose2D(4.0, 0.0, 0.0), 4.0, 2.0))
        assert not boxes_overlap(a, OrientedBox(Pose2D(4.001, 0.0, 0.0), 4.0, 2.0))

    def test_rotated_near_miss(self):
        a = OrientedBox(Pose2D(0.0, 0.0, 0.0), 4.0, 2.0)
        # Box edge at x=2; the diamond's near vertex is sqrt(2) from its
        # center, so contact happens at center distance 2 + sqrt(2).
        b = OrientedBox(Pose2D(2.0 + math.sqrt(2) + 0.1, 0.0, math.pi / 4), 2.0, 2.0)
        assert not boxes_overlap(a, b)
        c = OrientedBox(Pose2D(2.0 + math.sqrt(2) - 0.1, 0.0, math.pi / 4), 2.0, 2.0)
        assert boxes_overlap(a, c)

    @given(
        st.floats(-6, 6), st.floats(-6, 6), finite_angle,
        st.floats(-6, 6), st.floats(-6, 6), finite_angle,
    )
    @settings(max_examples=200)
    def test_overlap_symmetric(self, ax, ay, at, bx, by, bt):
        a = OrientedBox(Pose2D(ax, ay, at), 4.5, 2.0)
        b = OrientedBox(Pose2D(bx, by, bt), 4.5, 2.0)
        assert boxes_overlap(a, b) == boxes_overlap(b, a)

    def test_far_apart_circle_prefilter(self):
        a = OrientedBox(Pose2D(0.0, 0.0, 0.3), 4.5, 2.0)
        b = OrientedBox(Pose2D(50.0, 0.0, 1.2), 4.5, 2.0)
        assert not boxes_overlap(a, b)


class TestPointsInPolygons:
    square = [np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])]

    def test_inside_outside(self):
        pts = np.array([[1.0, 1.0], [3.0, 1.0], [-0.1, 0.5]])
        np.testing.assert_array_equal(
            points_in_polygons(pts, self.square), [True, False, False]
        )

    def test_boundary_counts_inside(self):
        pts = np.array([[0.0, 1.0], [2.0, 2.0], [1.0, 0.0]])
        assert points_in_polygons(pts, self.square).all()

    def test_union_of_disjoint_polygons(self):
        polys = [
            np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
            np.array([[5.0, 0.0], [6.0, 0.0], [6.0, 1.0], [5.0, 1.0]]),
        ]
        pts = np.array([[0.5, 0.5], [5.5, 0.5], [3.0, 0.5]])
        np.testing.assert_array_equal(
            points_in_polygons(pts, polys), [True, True, False]
        )

    def test_concave_polygon(self):
        # L-shape: the notch is outside even though the bounding box covers it.
        ell = [np.array([[0, 0], [4, 0], [4, 2], [2, 2], [2, 4], [0, 4]], dtype=float)]
        pts = np.array([[1.0, 3.0], [3.0, 3.0], [3.0, 1.0]])
        np.testing.assert_array_equal(points_in_polygons(pts, ell), [True, False, True])
