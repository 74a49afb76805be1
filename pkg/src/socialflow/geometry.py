"""Planar geometry primitives shared by the simulation engine.

Everything downstream (scenario loading, vehicle dynamics, observation
building, termination checks) is built on the small set of types and
operations defined here: SE(2) poses and frame transforms, vectorized
polylines, point-to-polyline projection, and oriented-box overlap tests.
All angles are radians normalized to (-pi, pi]; distances are meters.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi

# Consecutive vectors of a static polyline may be at most this far apart
# unless the caller overrides the limit.
DEFAULT_MAX_SPACING = 2.0


def norm_angle(theta: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    theta = math.fmod(theta, TWO_PI)
    if theta <= -math.pi:
        theta += TWO_PI
    elif theta > math.pi:
        theta -= TWO_PI
    return theta


@dataclass(frozen=True)
class Pose2D:
    """Planar pose (x, y, heading); heading normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", norm_angle(self.theta))


def transform_to_frame(point: Pose2D, frame: Pose2D) -> Pose2D:
    """Express a global pose in the coordinate system of ``frame``.

    The frame's own pose maps to the origin with zero heading.  Composing
    with :func:`transform_from_frame` recovers the input up to floating
    point rounding.
    """
    dx = point.x - frame.x
    dy = point.y - frame.y
    c = math.cos(frame.theta)
    s = math.sin(frame.theta)
    return Pose2D(c * dx + s * dy, -s * dx + c * dy, point.theta - frame.theta)


def transform_from_frame(point: Pose2D, frame: Pose2D) -> Pose2D:
    """Inverse of :func:`transform_to_frame`: local pose back to global."""
    c = math.cos(frame.theta)
    s = math.sin(frame.theta)
    return Pose2D(
        frame.x + c * point.x - s * point.y,
        frame.y + s * point.x + c * point.y,
        point.theta + frame.theta,
    )


class PolylineKind(enum.IntEnum):
    # Enum order doubles as the sort order of static polylines in
    # observations, so do not reorder members.
    CENTERLINE = 0
    SIDELINE = 1
    GLOBAL_PATH = 2
    AGENT_HISTORY = 3


@dataclass(frozen=True)
class StaticVector:
    """One sample of a map polyline: midpoint pose, lane width, index."""

    x: float
    y: float
    theta: float
    lane_width: float
    index: int


@dataclass(frozen=True)
class DynamicVector:
    """One sample of an agent trail: pose, speed, history slot h.

    ``h`` counts backwards in time: h=1 is the current step, h=H the
    oldest retained sample.  ``svo`` stays None until a communication
    round attaches a value (degrees, or the invisibility sentinel).
    """

    x: float
    y: float
    theta: float
    speed: float
    h: int
    svo: Union[float, None] = None


class EmptyPolyline(ValueError):
    pass


class SpacingViolation(ValueError):
    pass


@dataclass
class Polyline:
    """Ordered vector list of a single map element or agent trail.

    Static kinds (centerline, sideline, global path) are validated on
    construction: at least one vector, strictly increasing indices, and
    consecutive samples no farther apart than ``max_spacing``.
    Agent-history polylines carry dynamic vectors and skip the spacing
    rule because trail geometry follows from vehicle motion.
    """

    kind: PolylineKind
    vectors: List[Union[StaticVector, DynamicVector]]
    max_spacing: float = field(default=DEFAULT_MAX_SPACING, repr=False)

    def __post_init__(self):
        if not self.vectors:
            raise EmptyPolyline(f"{self.kind.name} polyline with no vectors")
        if self.kind == PolylineKind.AGENT_HISTORY:
            return
        prev = None
        for v in self.vectors:
            if prev is not None:
                if v.index <= prev.index:
                    raise ValueError(
                        f"{self.kind.name} indices not strictly increasing "
                        f"({prev.index} then {v.index})"
                    )
                gap = math.hypot(v.x - prev.x, v.y - prev.y)
                if gap > self.max_spacing + 1e-9:
                    raise SpacingViolation(
                        f"{self.kind.name} spacing {gap:.3f} m exceeds "
                        f"{self.max_spacing} m at index {v.index}"
                    )
            prev = v

    def points(self) -> np.ndarray:
        return np.array([[v.x, v.y] for v in self.vectors], dtype=float)


@dataclass(frozen=True)
class PathProjection:
    """Result of projecting a point onto a polyline.

    ``arclength`` is measured from the first vector along the segments,
    ``lateral_offset`` is signed (positive left of travel direction) and
    ``segment_heading`` is the direction of the segment that realized
    the minimum distance.
    """

    arclength: float
    lateral_offset: float
    segment_heading: float


class DegeneratePath(ValueError):
    """Polyline has no segment of positive length to project onto."""


class PathArrays:
    """Precompiled segment arrays for fast repeated projection.

    Zero-length segments are dropped at construction; projection results
    are identical to projecting onto the original polyline because a
    zero-length segment never realizes a strictly smaller distance than
    its neighbours (ties break toward lower arclength).
    """

    __slots__ = (
        "ax", "ay", "ux", "uy", "seg_len", "cum0", "total_length",
        "n_seg", "points",
        "ax_f", "ay_f", "ux_f", "uy_f", "len_f", "cum_f",
    )

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise DegeneratePath("need an (N, 2) array of points")
        d = np.diff(pts, axis=0)
        seg_len = np.hypot(d[:, 0], d[:, 1])
        keep = seg_len > 0.0
        if len(pts) < 2 or not keep.any():
            raise DegeneratePath("polyline has no segment of positive length")
        # cum0[k] = arclength at the start of kept segment k, measured on
        # the original polyline (zero-length segments contribute nothing).
        starts = np.concatenate(([0.0], np.cumsum(seg_len)))[:-1]
        self.ax = np.ascontiguousarray(pts[:-1, 0][keep])
        self.ay = np.ascontiguousarray(pts[:-1, 1][keep])
        self.seg_len = np.ascontiguousarray(seg_len[keep])
        self.ux = np.ascontiguousarray(d[:, 0][keep] / seg_len[keep])
        self.uy = np.ascontiguousarray(d[:, 1][keep] / seg_len[keep])
        self.cum0 = np.ascontiguousarray(starts[keep])
        self.total_length = float(seg_len.sum())
        self.n_seg = int(keep.sum())
        self.points = pts
        # Plain-float twins of the segment arrays for scalar hot loops;
        # tolist() preserves the exact double values.
        self.ax_f = tuple(self.ax.tolist())
        self.ay_f = tuple(self.ay.tolist())
        self.ux_f = tuple(self.ux.tolist())
        self.uy_f = tuple(self.uy.tolist())
        self.len_f = tuple(self.seg_len.tolist())
        self.cum_f = tuple(self.cum0.tolist())

    def project(self, px: float, py: float) -> PathProjection:
        """Project one point onto the whole polyline (global argmin)."""
        s, d, heading, _ = self.project_window(px, py, 0, self.n_seg)
        return PathProjection(s, d, heading)

    def project_window(self, px, py, lo: int, hi: int):
        """Project onto segments [lo, hi); returns (s, lateral, heading, k).

        ``k`` is the index (within the full segment array) of the segment
        realizing the minimum; ties resolve to the lowest index, which is
        the lowest arclength.
        """
        ax = self.ax[lo:hi]
        ay = self.ay[lo:hi]
        ux = self.ux[lo:hi]
        uy = self.uy[lo:hi]
        dx = px - ax
        dy = py - ay
        t = np.clip(dx * ux + dy * uy, 0.0, self.seg_len[lo:hi])
        rx = dx - t * ux
        ry = dy - t * uy
        dist2 = rx * rx + ry * ry
        j = int(np.argmin(dist2))
        k = lo + j
        s = self.cum0[k] + t[j]
        # Signed perpendicular component, positive left of travel; points
        # beyond an endpoint keep only their lateral part, the
        # longitudinal remainder is clamped away.
        lateral = self.ux[k] * ry[j] - self.uy[k] * rx[j]
        heading = math.atan2(self.uy[k], self.ux[k])
        return float(s), float(lateral), heading, k

    def nearest_window(self, px, py, lo: int, hi: int):
        """Nearest-point query over segments [lo, hi); (dist, s, heading, k).

        Unlike :meth:`project_window` the returned distance is the true
        euclidean distance to the nearest path point, so longitudinal
        overshoot past a clamped endpoint counts toward it.  Ties resolve
        to the lowest index.
        """
        ax = self.ax[lo:hi]
        ay = self.ay[lo:hi]
        ux = self.ux[lo:hi]
        uy = self.uy[lo:hi]
        dx = px - ax
        dy = py - ay
        t = np.clip(dx * ux + dy * uy, 0.0, self.seg_len[lo:hi])
        rx = dx - t * ux
        ry = dy - t * uy
        dist2 = rx * rx + ry * ry
        j = int(np.argmin(dist2))
        k = lo + j
        s = self.cum0[k] + t[j]
        heading = math.atan2(self.uy[k], self.ux[k])
        return math.sqrt(float(dist2[j])), float(s), heading, k

    def project_range_scalar(self, px: float, py: float, lo: int, hi: int):
        """Scalar twin of :meth:`project_window`; (s, lateral, k).

        Same arithmetic operation for operation as the vector path, so
        the results are bit-identical; ties resolve to the lowest index.
        The heading is omitted because the hot callers never need it.
        """
        axf = self.ax_f
        ayf = self.ay_f
        uxf = self.ux_f
        uyf = self.uy_f
        lenf = self.len_f
        best = math.inf
        best_t = 0.0
        best_k = lo
        best_rx = 0.0
        best_ry = 0.0
        for k in range(lo, hi):
            dx = px - axf[k]
            dy = py - ayf[k]
            ux = uxf[k]
            uy = uyf[k]
            t = dx * ux + dy * uy
            if t < 0.0:
                t = 0.0
            else:
                seg = lenf[k]
                if t > seg:
                    t = seg
            rx = dx - t * ux
            ry = dy - t * uy
            d2 = rx * rx + ry * ry
            if d2 < best:
                best = d2
                best_t = t
                best_k = k
                best_rx = rx
                best_ry = ry
        s = self.cum_f[best_k] + best_t
        lateral = uxf[best_k] * best_ry - uyf[best_k] * best_rx
        return s, lateral, best_k

    def nearest_range_scalar(self, px: float, py: float, lo: int, hi: int):
        """Scalar twin of :meth:`nearest_window`; (dist2, t, k).

        Same arithmetic operation for operation, so results are
        bit-identical to the vector path; ties resolve to the lowest
        index.  Returns the squared distance so callers scanning several
        ranges can pick the winner the way a single argmin over their
        union would, then take one square root at the end.
        """
        axf = self.ax_f
        ayf = self.ay_f
        uxf = self.ux_f
        uyf = self.uy_f
        lenf = self.len_f
        best = math.inf
        best_t = 0.0
        best_k = lo
        for k in range(lo, hi):
            dx = px - axf[k]
            dy = py - ayf[k]
            ux = uxf[k]
            uy = uyf[k]
            t = dx * ux + dy * uy
            if t < 0.0:
                t = 0.0
            else:
                seg = lenf[k]
                if t > seg:
                    t = seg
            rx = dx - t * ux
            ry = dy - t * uy
            d2 = rx * rx + ry * ry
            if d2 < best:
                best = d2
                best_t = t
                best_k = k
        return best, best_t, best_k

    def point_at(self, s: float):
        """Point and heading at clamped arclength ``s``; (x, y, heading)."""
        s = min(max(s, 0.0), self.total_length)
        k = bisect_right(self.cum_f, s) - 1
        if k < 0:
            k = 0
        t = min(s - self.cum_f[k], self.len_f[k])
        return (
            self.ax_f[k] + t * self.ux_f[k],
            self.ay_f[k] + t * self.uy_f[k],
            math.atan2(self.uy_f[k], self.ux_f[k]),
        )


def project_onto_path(point: Sequence[float], path) -> PathProjection:
    """Project an (x, y) point onto a polyline.

    Accepts a :class:`Polyline`, a :class:`PathArrays`, or a raw (N, 2)
    point array.  Raises :class:`DegeneratePath` when the polyline has
    fewer than two distinct points.
    """
    if isinstance(path, PathArrays):
        pa = path
    elif isinstance(path, Polyline):
        pa = PathArrays(path.points())
    else:
        pa = PathArrays(np.asarray(path, dtype=float))
    return pa.project(float(point[0]), float(point[1]))


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with center pose, length along heading, width across."""

    center: Pose2D
    length: float
    width: float

    def corners(self) -> np.ndarray:
        """Corner coordinates, (4, 2), counterclockwise from front-left."""
        c = math.cos(self.center.theta)
        s = math.sin(self.center.theta)
        hl = 0.5 * self.length
        hw = 0.5 * self.width
        cx, cy = self.center.x, self.center.y
        return np.array(
            [
                [cx + c * hl - s * hw, cy + s * hl + c * hw],
                [cx - c * hl - s * hw, cy - s * hl + c * hw],
                [cx - c * hl + s * hw, cy - s * hl - c * hw],
                [cx + c * hl + s * hw, cy + s * hl - c * hw],
            ]
        )


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis overlap test; touching edges count as overlap."""
    return _corners_overlap(
        a.corners(), b.corners(),
        math.cos(a.center.theta), math.sin(a.center.theta),
        math.cos(b.center.theta), math.sin(b.center.theta),
    )


def _corners_overlap(ca, cb, cos_a, sin_a, cos_b, sin_b) -> bool:
    # Four candidate axes: the edge normals of both rectangles.
    for (ux, uy) in (
        (cos_a, sin_a), (-sin_a, cos_a),
        (cos_b, sin_b), (-sin_b, cos_b),
    ):
        pa = ca[:, 0] * ux + ca[:, 1] * uy
        pb = cb[:, 0] * ux + cb[:, 1] * uy
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


class PolygonUnion:
    """Edge table of a polygon union, precompiled for repeated queries.

    Boundary points count as inside (the test uses the even-odd rule with
    a half-open edge convention plus an explicit on-edge check, so points
    exactly on a shared boundary of two polygons are not double-flipped
    out of the union).  Parity is evaluated per polygon over the exact
    same edge arithmetic as a polygon-at-a-time loop, so precompiling
    never changes a membership decision.
    """

    __slots__ = ("x1", "y1", "x2", "y2", "ex", "ey", "len2_safe", "offsets")

    def __init__(self, polygons: Sequence[np.ndarray]):
        xs1, ys1, xs2, ys2 = [], [], [], []
        offsets = []
        count = 0
        for poly in polygons:
            p = np.asarray(poly, dtype=float)
            offsets.append(count)
            xs1.append(p[:, 0])
            ys1.append(p[:, 1])
            xs2.append(np.roll(p[:, 0], -1))
            ys2.append(np.roll(p[:, 1], -1))
            count += len(p)
        self.x1 = np.concatenate(xs1)[None, :]
        self.y1 = np.concatenate(ys1)[None, :]
        self.x2 = np.concatenate(xs2)[None, :]
        self.y2 = np.concatenate(ys2)[None, :]
        self.ex = self.x2 - self.x1
        self.ey = self.y2 - self.y1
        seg_len2 = self.ex * self.ex + self.ey * self.ey
        self.len2_safe = np.where(seg_len2 > 0, seg_len2, 1.0)
        self.offsets = np.asarray(offsets, dtype=np.intp)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership of each (x, y) row in the union."""
        pts = np.asarray(points, dtype=float)
        x = pts[:, 0][:, None]
        y = pts[:, 1][:, None]
        # Even-odd crossing count over edges whose y-span straddles the
        # point, folded to parity within each source polygon.
        straddle = (self.y1 > y) != (self.y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = self.x1 + (y - self.y1) * self.ex / self.ey
        crossing = straddle & (x < xs)
        parity = np.add.reduceat(crossing.astype(np.int32), self.offsets, axis=1) & 1
        inside = (parity == 1).any(axis=1)
        # On-edge points are inside regardless of crossing parity.
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((x - self.x1) * self.ex + (y - self.y1) * self.ey) / self.len2_safe
        t = np.clip(t, 0.0, 1.0)
        ddx = x - (self.x1 + t * self.ex)
        ddy = y - (self.y1 + t * self.ey)
        on_edge = (ddx * ddx + ddy * ddy <= 1e-18).any(axis=1)
        return inside | on_edge


def points_in_polygons(points: np.ndarray, polygons: List[np.ndarray]) -> np.ndarray:
    """Membership of each point in the union of simple polygons.

    One-shot convenience over :class:`PolygonUnion`; callers with a
    stable polygon set should precompile the union once instead.
    """
    return PolygonUnion(polygons).contains(points)
