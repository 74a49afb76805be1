#!/usr/bin/env python3
"""Author the bundled scenario documents.

Generates the four scenario YAML files under src/socialflow/assets/ from
parametric road geometry: a four-arm intersection, a two-to-one lane
bottleneck, an on-ramp merge, and a four-arm roundabout.  Rerunning the
script reproduces the files byte for byte; every output is re-loaded
through the package validator before it is written.

Conventions: right-hand traffic, 4 m lanes, 1.8 m vector spacing on
straights and 1.5 m on arcs.  All coordinates round to 6 decimals; spawn
slot poses are computed from the rounded path geometry so they sit on
their paths exactly.
"""

import math
import os
import sys

import numpy as np
import yaml

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from socialflow.geometry import PathArrays  # noqa: E402
from socialflow.scenario import scenario_from_dict  # noqa: E402

LANE_W = 4.0
VEHICLE = {
    "length": 4.5,
    "width": 2.0,
    "wheelbase": 2.8,
    "v_max": 10.0,
    "sigma_max": 0.6,
    "accel_max": 5.0,
}

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "socialflow", "assets")


def rnd(v):
    return round(float(v), 6)


def straight(p0, p1, step=1.8):
    """Sample a straight segment, endpoints included; rows (x, y, theta)."""
    x0, y0 = p0
    x1, y1 = p1
    dist = math.hypot(x1 - x0, y1 - y0)
    n = max(1, math.ceil(dist / step))
    heading = math.atan2(y1 - y0, x1 - x0)
    return [
        (x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * i / n, heading)
        for i in range(n + 1)
    ]


def arc(center, radius, a0_deg, a1_deg, step=1.5):
    """Sample a circular arc from angle a0 to a1 (degrees, signed sweep).

    Headings are tangents in the direction of travel: +90 degrees off the
    radial angle for counterclockwise sweeps, -90 for clockwise.
    """
    cx, cy = center
    a0 = math.radians(a0_deg)
    a1 = math.radians(a1_deg)
    sweep = a1 - a0
    arclen = abs(sweep) * radius
    n = max(1, math.ceil(arclen / step))
    sign = 1.0 if sweep >= 0 else -1.0
    out = []
    for i in range(n + 1):
        a = a0 + sweep * i / n
        out.append(
            (
                cx + radius * math.cos(a),
                cy + radius * math.sin(a),
                a + sign * math.pi / 2.0,
            )
        )
    return out


def chain(*parts):
    """Concatenate point runs, dropping duplicated junction points."""
    pts = list(parts[0])
    for part in parts[1:]:
        if math.hypot(part[0][0] - pts[-1][0], part[0][1] - pts[-1][1]) < 1e-9:
            pts.extend(part[1:])
        else:
            pts.extend(part)
    return pts


def rot(points, quarter_turns):
    """Rotate (x, y, theta) rows by 90-degree multiples about the origin."""
    k = quarter_turns % 4
    out = points
    for _ in range(k):
        out = [(-y, x, t + math.pi / 2.0) for (x, y, t) in out]
    return [(x, y, math.atan2(math.sin(t), math.cos(t))) for (x, y, t) in out]


def poly_entry(points, lane_width=LANE_W, with_id=None):
    entry = {"points": [[rnd(x), rnd(y), rnd(t)] for (x, y, t) in points]}
    if lane_width:
        entry["lane_width"] = lane_width
    if with_id is not None:
        entry["id"] = with_id
    return entry


def slots_for(path_points_by_id, bindings):
    """Spawn slots from (path_id, arclength) bindings.

    The pose comes from the rounded path geometry, so the slot lies on
    its path to machine precision.
    """
    slots = []
    for path_id, s in bindings:
        pts = np.array([[p[0], p[1]] for p in path_points_by_id[path_id]])
        arrays = PathArrays(pts)
        x, y, theta = arrays.point_at(s)
        slots.append({"x": float(x), "y": float(y), "theta": rnd(theta), "path": path_id})
    return slots


def rounded_paths(raw_paths):
    """Round path coordinates once, before slots are derived from them."""
    return [
        [(rnd(x), rnd(y), rnd(t)) for (x, y, t) in path]
        for path in raw_paths
    ]


def build_intersection():
    # Four 51 m arms around a square conflict core.  Lane centers sit
    # +-2 m off the road axis; the core half-width of 9 m leaves turn
    # radii of 7 m (right) and 11 m (left).
    B = 9.0
    APPROACH_X = -60.0
    routes_west = {
        "straight": chain(
            straight((APPROACH_X, -2.0), (-B, -2.0)),
            straight((-B, -2.0), (20.0, -2.0)),
        ),
        "right": chain(
            straight((APPROACH_X, -2.0), (-B, -2.0)),
            arc((-B, -B), 7.0, 90.0, 0.0),
            straight((-2.0, -B), (-2.0, -20.0)),
        ),
        "left": chain(
            straight((APPROACH_X, -2.0), (-B, -2.0)),
            arc((-B, 9.0), 11.0, -90.0, 0.0),
            straight((2.0, B), (2.0, 20.0)),
        ),
    }
    raw_paths = []
    for k in range(4):
        for name in ("straight", "right", "left"):
            raw_paths.append(rot(routes_west[name], k))
    paths = rounded_paths(raw_paths)

    centerlines = []
    lane_dirs = []
    for k in range(4):
        inbound = rot(straight((APPROACH_X, -2.0), (-B, -2.0)), k)
        outbound = rot(straight((-B, 2.0), (APPROACH_X, 2.0)), k)
        centerlines.append(inbound)
        lane_dirs.append(rnd(inbound[0][2]))
        centerlines.append(outbound)
        lane_dirs.append(rnd(outbound[0][2]))

    sidelines = []
    for k in range(4):
        sidelines.append(rot(straight((APPROACH_X, -6.0), (-B, -6.0)), k))
        sidelines.append(rot(straight((APPROACH_X, 6.0), (-B, 6.0)), k))

    # Arms pad 6 m past the spawn ends so jittered footprints stay on
    # the road.
    drivable = [
        [[-66.0, -6.0], [66.0, -6.0], [66.0, 6.0], [-66.0, 6.0]],
        [[-6.0, -66.0], [6.0, -66.0], [6.0, 66.0], [-6.0, 66.0]],
        [[-10.5, -10.5], [10.5, -10.5], [10.5, 10.5], [-10.5, 10.5]],
    ]
    zone = [[-9.5, -9.5], [9.5, -9.5], [9.5, 9.5], [-9.5, 9.5]]

    # Per-arm depth offsets desynchronize arrivals at the core; with
    # equal depths all four lead cars reach the conflict area in the
    # same second and pile up.
    # 26 m within-arm spacing with quarter-phase arm offsets keeps every
    # cross-arm arrival difference at 6.5 m or more, so only jitter can
    # push a crossing pair under the conflict window.
    route_pairs = [(0, 1), (1, 0), (0, 2), (1, 0)]
    bindings = []
    for k in range(4):
        ids = (3 * k, 3 * k + 1, 3 * k + 2)
        d = 6.5 * k
        a, b = route_pairs[k]
        bindings += [(ids[a], d), (ids[b], d + 22.0)]

    return {
        "format_version": 1,
        "name": "intersection",
        "default_agent_count": 8,
        "vehicle": VEHICLE,
        "centerlines": [poly_entry(c) for c in centerlines],
        "sidelines": [poly_entry(s, lane_width=0) for s in sidelines],
        "drivable_area": drivable,
        "interaction_zone": zone,
        "lane_directions": lane_dirs,
        "spawn_slots": slots_for(paths, bindings),
        "candidate_paths": [
            poly_entry(p, with_id=i) for i, p in enumerate(paths)
        ],
    }


def smoothstep(t):
    return 3.0 * t * t - 2.0 * t * t * t


def smoothstep_d(t):
    return 6.0 * t - 6.0 * t * t


def curve_by_x(x0, x1, y_of_x, dy_of_x, step=1.55):
    n = max(1, math.ceil((x1 - x0) / step))
    out = []
    for i in range(n + 1):
        x = x0 + (x1 - x0) * i / n
        out.append((x, y_of_x(x), math.atan(dy_of_x(x))))
    return out


def build_bottleneck():
    # Two eastbound lanes squeeze into one through a long smoothstep
    # taper (x 66..106), share a 12 m throat, and fan back out.  The
    # shallow taper angle keeps converging cars inside each other's
    # leader gate before their corners can meet.
    def lane(sign):
        def y_val(x):
            if x <= 66.0:
                return sign * 2.0
            if x <= 106.0:
                return sign * 2.0 * (1.0 - smoothstep((x - 66.0) / 40.0))
            if x <= 118.0:
                return 0.0
            if x <= 138.0:
                return sign * 2.0 * smoothstep((x - 118.0) / 20.0)
            return sign * 2.0

        def dy_val(x):
            if 66.0 < x <= 106.0:
                return -sign * 2.0 * smoothstep_d((x - 66.0) / 40.0) / 40.0
            if 118.0 < x <= 138.0:
                return sign * 2.0 * smoothstep_d((x - 118.0) / 20.0) / 20.0
            return 0.0

        return chain(
            straight((0.0, sign * 2.0), (66.0, sign * 2.0)),
            curve_by_x(66.0, 138.0, y_val, dy_val),
            straight((138.0, sign * 2.0), (154.0, sign * 2.0)),
        )

    raw_paths = [lane(1.0), lane(-1.0)]
    paths = rounded_paths(raw_paths)
    centerlines = [list(p) for p in paths]
    lane_dirs = [0.0, 0.0]

    def edge(sign):
        def y_val(x):
            if x <= 66.0:
                return sign * 6.0
            if x <= 106.0:
                return sign * (4.0 + 2.0 * (1.0 - smoothstep((x - 66.0) / 40.0)))
            if x <= 118.0:
                return sign * 4.0
            if x <= 138.0:
                return sign * (4.0 + 2.0 * smoothstep((x - 118.0) / 20.0))
            return sign * 6.0

        def dy_val(x):
            if 66.0 < x <= 106.0:
                return -sign * 2.0 * smoothstep_d((x - 66.0) / 40.0) / 40.0
            if 118.0 < x <= 138.0:
                return sign * 2.0 * smoothstep_d((x - 118.0) / 20.0) / 20.0
            return 0.0

        return chain(
            straight((0.0, sign * 6.0), (66.0, sign * 6.0)),
            curve_by_x(66.0, 138.0, y_val, dy_val),
            straight((138.0, sign * 6.0), (154.0, sign * 6.0)),
        )

    sidelines = [edge(1.0), edge(-1.0)]

    # The polygon pads 6 m past both path ends so spawn jitter never
    # pushes a footprint corner off the road.
    top = []
    for x in [-6.0, 66.0, 72.0, 78.0, 84.0, 90.0, 96.0, 102.0, 106.0, 118.0, 122.0, 126.0, 130.0, 134.0, 138.0, 160.0]:
        if x <= 66.0 or x >= 138.0:
            y = 6.0
        elif x <= 106.0:
            y = 4.0 + 2.0 * (1.0 - smoothstep((x - 66.0) / 40.0))
        elif x <= 118.0:
            y = 4.0
        else:
            y = 4.0 + 2.0 * smoothstep((x - 118.0) / 20.0)
        top.append([rnd(x), rnd(y + 0.3)])
    bottom = [[x, -y] for (x, y) in reversed(top)]
    drivable = [top + bottom]
    zone = [[64.0, -3.8], [120.0, -3.8], [120.0, 3.8], [64.0, 3.8]]

    # A sub-capacity burst: merged arrival gaps of 10 m or more flow
    # through the throat without compounding, except one near-abeam
    # lead pair whose taper conflict the spawn jitter decides.
    bindings = [(0, s) for s in (0.0, 27.0, 54.0)]
    bindings += [(1, s) for s in (1.0, 17.0, 44.0)]

    return {
        "format_version": 1,
        "name": "bottleneck",
        "default_agent_count": 6,
        "vehicle": VEHICLE,
        "centerlines": [poly_entry(c) for c in centerlines],
        "sidelines": [poly_entry(s, lane_width=0) for s in sidelines],
        "drivable_area": drivable,
        "interaction_zone": zone,
        "lane_directions": lane_dirs,
        "spawn_slots": slots_for(paths, bindings),
        "candidate_paths": [poly_entry(p, with_id=i) for i, p in enumerate(paths)],
    }


def build_merge():
    # Two-lane eastbound main road; an on-ramp climbs from y=-20 and
    # blends into the right lane at x=75 via a smoothstep.
    def ramp_y(x):
        return -20.0 * (1.0 - smoothstep((x - 15.0) / 60.0))

    def ramp_dy(x):
        return 20.0 * smoothstep_d((x - 15.0) / 60.0) / 60.0

    main_right = straight((0.0, 0.0), (105.0, 0.0))
    main_left = straight((0.0, 4.0), (105.0, 4.0))
    ramp = chain(
        curve_by_x(15.0, 75.0, ramp_y, ramp_dy),
        straight((75.0, 0.0), (105.0, 0.0)),
    )
    raw_paths = [main_right, main_left, ramp]
    paths = rounded_paths(raw_paths)

    centerlines = [
        list(paths[0]),
        list(paths[1]),
        [(rnd(x), rnd(y), rnd(t)) for (x, y, t) in curve_by_x(15.0, 75.0, ramp_y, ramp_dy)],
    ]
    lane_dirs = [0.0, 0.0, 0.0]

    sidelines = [
        straight((0.0, 6.0), (105.0, 6.0)),
        straight((0.0, -2.0), (55.0, -2.0)),
        straight((75.0, -2.0), (105.0, -2.0)),
        curve_by_x(15.0, 72.0, lambda x: ramp_y(x) - 2.2, ramp_dy),
    ]

    ramp_poly_top = []
    ramp_poly_bot = []
    for x in np.linspace(11.0, 77.0, 18):
        y = ramp_y(max(float(x), 15.0)) if x >= 15.0 else -20.0
        ramp_poly_top.append([rnd(x), rnd(y + 2.4)])
        ramp_poly_bot.append([rnd(x), rnd(y - 2.4)])
    ramp_polygon = ramp_poly_top + ramp_poly_bot[::-1]

    # Main rect pads 6 m past the path ends; the ramp strip needs no pad
    # because spawn jitter clamps at the path start.
    drivable = [
        [[-6.0, -3.0], [111.0, -3.0], [111.0, 7.0], [-6.0, 7.0]],
        ramp_polygon,
    ]
    zone = [[58.0, -2.0], [92.0, -2.0], [92.0, 6.0], [58.0, 6.0]]

    bindings = []
    for pid in (0, 1):
        bindings += [(pid, s) for s in (0.0, 9.0, 18.0, 27.0, 36.0, 45.0, 54.0)]
    bindings += [(2, s) for s in (0.0, 9.0, 18.0, 27.0, 36.0)]

    return {
        "format_version": 1,
        "name": "merge",
        "default_agent_count": 12,
        "vehicle": VEHICLE,
        "centerlines": [poly_entry(c) for c in centerlines],
        "sidelines": [poly_entry(s, lane_width=0) for s in sidelines],
        "drivable_area": drivable,
        "interaction_zone": zone,
        "lane_directions": lane_dirs,
        "spawn_slots": slots_for(paths, bindings),
        "candidate_paths": [poly_entry(p, with_id=i) for i, p in enumerate(paths)],
    }


def build_roundabout():
    # Counterclockwise ring of radius 12 with four two-way arms.  Entries
    # and exits join the ring tangentially through 22.14 m arcs at the
    # +-45 degree points of each quadrant.
    R = 12.0
    SQ = math.sqrt(0.5)
    # Entry arc: straight x=2 up to y=y_s, then a right-hand arc onto the
    # ring at polar angle -45 degrees.  r_a solves the tangency condition.
    r_a = (R * SQ - 2.0) / (1.0 - SQ)
    y_s = -(R * SQ) - SQ * r_a
    arm_far = -70.0

    entry = chain(
        straight((2.0, arm_far), (2.0, y_s)),
        arc((2.0 + r_a, y_s), r_a, 180.0, 135.0),
    )
    exit_south = chain(
        arc((-(2.0 + r_a), y_s), r_a, 45.0, 0.0),
        straight((-2.0, y_s), (-2.0, -38.0)),
    )

    def ring(a0, a1):
        return arc((0.0, 0.0), R, a0, a1, step=1.5)

    routes_south = {
        "right": chain(entry, rot(exit_south, 1)),
        "straight": chain(entry, ring(-45.0, 45.0), rot(exit_south, 2)),
        "left": chain(entry, ring(-45.0, 135.0), rot(exit_south, 3)),
    }
    raw_paths = []
    for k in range(4):
        for name in ("right", "straight", "left"):
            raw_paths.append(rot(routes_south[name], k))
    paths = rounded_paths(raw_paths)

    centerlines = []
    lane_dirs = []
    ring_line = arc((0.0, 0.0), R, 0.0, 360.0 - 360.0 / 42.0, step=1.8)
    centerlines.append(ring_line)
    lane_dirs.append(rnd(ring_line[0][2]))
    for k in range(4):
        inbound = rot(straight((2.0, arm_far), (2.0, y_s)), k)
        outbound = rot(straight((-2.0, y_s), (-2.0, arm_far)), k)
        centerlines.append(inbound)
        lane_dirs.append(rnd(inbound[0][2]))
        centerlines.append(outbound)
        lane_dirs.append(rnd(outbound[0][2]))

    sidelines = [
        arc((0.0, 0.0), 16.0, 0.0, 360.0 - 360.0 / 56.0, step=1.8),
        arc((0.0, 0.0), 8.5, 0.0, 360.0 - 360.0 / 30.0, step=1.8),
    ]
    edge_y = -math.sqrt(16.0 ** 2 - 36.0)
    for k in range(4):
        sidelines.append(rot(straight((6.0, arm_far), (6.0, edge_y)), k))
        sidelines.append(rot(straight((-6.0, arm_far), (-6.0, edge_y)), k))

    drivable = []
    for k in range(4):
        quarter = []
        a0 = k * 90.0
        for i in range(7):
            a = math.radians(a0 + 15.0 * i)
            quarter.append([rnd(16.0 * math.cos(a)), rnd(16.0 * math.sin(a))])
        for i in range(7):
            a = math.radians(a0 + 90.0 - 15.0 * i)
            quarter.append([rnd(8.5 * math.cos(a)), rnd(8.5 * math.sin(a))])
        drivable.append(quarter)
        # Pad 6 m past the arm spawn end so jittered footprints stay on.
        arm = rot(
            [(-6.5, arm_far - 6.0, 0.0), (6.5, arm_far - 6.0, 0.0), (6.5, -8.6, 0.0), (-6.5, -8.6, 0.0)], k
        )
        drivable.append([[rnd(x), rnd(y)] for (x, y, _) in arm])

    zone = []
    n_zone = 60
    for i in range(n_zone):
        a = math.radians(-177.0 + 354.0 * i / (n_zone - 1))
        zone.append([rnd(15.8 * math.cos(a)), rnd(15.8 * math.sin(a))])
    for i in range(n_zone):
        a = math.radians(177.0 - 354.0 * i / (n_zone - 1))
        zone.append([rnd(8.7 * math.cos(a)), rnd(8.7 * math.sin(a))])

    # Staggered per-arm depths spread the ring entries out in time.
    bindings = []
    for k in range(4):
        r_id, s_id, l_id = 3 * k, 3 * k + 1, 3 * k + 2
        d = 5.5 * k
        bindings += [(r_id, d), (s_id, d + 30.0)]

    return {
        "format_version": 1,
        "name": "roundabout",
        "default_agent_count": 6,
        "vehicle": VEHICLE,
        "centerlines": [poly_entry(c) for c in centerlines],
        "sidelines": [poly_entry(s, lane_width=0) for s in sidelines],
        "drivable_area": drivable,
        "interaction_zone": zone,
        "lane_directions": lane_dirs,
        "spawn_slots": slots_for(paths, bindings),
        "candidate_paths": [poly_entry(p, with_id=i) for i, p in enumerate(paths)],
    }


def check_footprint_coverage(spec):
    """A default vehicle swept along every path, including 2 m of spawn
    jitter overhang, must keep all four corners on the drivable area."""
    from socialflow.geometry import OrientedBox, Pose2D, points_in_polygons

    veh = spec.vehicle
    for p in spec.paths:
        arrays = p.arrays
        s = -2.0
        while s <= arrays.total_length:
            x, y, theta = arrays.point_at(max(s, 0.0))
            corners = OrientedBox(Pose2D(x, y, theta), veh.length, veh.width).corners()
            inside = points_in_polygons(corners, spec.drivable_area)
            if not inside.all():
                raise AssertionError(
                    f"{spec.name}: path {p.path_id} footprint leaves the road "
                    f"at arclength {s:.1f} ({x:.2f}, {y:.2f})"
                )
            s += 0.5


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    builders = {
        "intersection": build_intersection,
        "bottleneck": build_bottleneck,
        "merge": build_merge,
        "roundabout": build_roundabout,
    }
    for name, build in builders.items():
        doc = build()
        spec = scenario_from_dict(doc, name_hint=name)  # validate before writing
        check_footprint_coverage(spec)
        path = os.path.join(OUT_DIR, f"{name}.yaml")
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)
        print(
            f"{name}: {len(spec.paths)} paths, {len(spec.spawn_slots)} slots, "
            f"{len(spec.centerlines)} centerlines -> {os.path.relpath(path)}"
        )


if __name__ == "__main__":
    main()
