"""Scripted longitudinal car-following and path-tracking steering.

Flow agents without a learned policy drive with the intelligent-driver
car-following law along their assigned global path, steered by pure
pursuit.  Leader selection works by projecting every other live agent
onto the follower's own path: whoever sits closest ahead within half a
lane width laterally is the leader.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

logger = logging.getLogger(__name__)

# Agents farther ahead than this along the path are never leaders.
LEADER_SEARCH_RADIUS = 60.0

# Pure-pursuit lookahead distance along the path, meters.
PURSUIT_LOOKAHEAD = 5.0


@dataclass(frozen=True)
class IdmParams:
    """Car-following constants.

    v0 is the desired free speed, T the safe time headway, s0 the jam
    distance, delta the free-acceleration exponent, a and b the maximum
    acceleration and comfortable deceleration.
    """

    v0: float = 6.0
    T: float = 1.0
    s0: float = 2.0
    delta: float = 4.0
    a: float = 5.0
    b: float = 5.0


@dataclass(frozen=True)
class LeaderInfo:
    """Resolved leader of a follower: id, bumper gap, current speed."""

    agent_id: int
    gap: float
    speed: float


def idm_acceleration(
    v_back: float,
    v_front: float,
    gap: float,
    params: IdmParams = IdmParams(),
) -> float:
    """Acceleration of the follower given the leader speed and gap.

    ``gap`` is bumper to bumper.  A non-positive gap means the pair
    already overlaps; the follower brakes as hard as the model allows
    (-2b) and the condition is logged rather than raised.  The output is
    always clamped to [-2b, a].
    """
    if gap <= 0.0:
        logger.debug("degenerate gap %.3f, emergency braking", gap)
        return -2.0 * params.b
    dv = v_back - v_front
    phi = params.s0 + v_back * params.T + v_back * dv / (2.0 * math.sqrt(params.a * params.b))
    accel = params.a * (1.0 - (v_back / params.v0) ** params.delta - (phi / gap) ** 2)
    lo = -2.0 * params.b
    if accel < lo:
        return lo
    if accel > params.a:
        return params.a
    return accel


def _segment_distance(arrays, k: int, px: float, py: float) -> float:
    """Euclidean distance from (px, py) to path segment ``k``.

    Mirrors the elementwise arithmetic of PathArrays.nearest_window
    operation for operation so the result is bit-identical to the value
    a full-range query would report for that segment.
    """
    dx = px - arrays.ax_f[k]
    dy = py - arrays.ay_f[k]
    ux = arrays.ux_f[k]
    uy = arrays.uy_f[k]
    t = dx * ux + dy * uy
    if t < 0.0:
        t = 0.0
    else:
        seg = arrays.len_f[k]
        if t > seg:
            t = seg
    rx = dx - t * ux
    ry = dy - t * uy
    return math.sqrt(rx * rx + ry * ry)


def find_leader(world, agent_id: int) -> Optional[LeaderInfo]:
    """Leader of ``agent_id`` on its own global path, or None.

    Every other live agent is projected onto the follower's path; a
    candidate qualifies when its arclength lead is strictly positive, at
    most LEADER_SEARCH_RADIUS, and it sits inside the follower's corridor
    (euclidean distance to the nearest path point within half the path's
    lane width, so a car longitudinally past the path end never counts).
    The nearest qualifying lead wins, with ties broken toward the lower
    agent id.  The gap subtracts half of both vehicle lengths from the
    center-to-center lead.

    Worlds whose agents carry projection and broad-phase caches (the
    simulation engine's records) are scanned without any full-path
    projections: same-path candidates reuse their own cached projection,
    and cross-path candidates are pruned by the scenario grid, which is
    conservative beyond half a lane width and therefore never changes
    the outcome.  Both routes produce bit-identical results.
    """
    me = world.agents[agent_id]
    path = me.path
    arrays = path.arrays
    half_lane = 0.5 * path.lane_width
    grid = getattr(world.scenario, "grid", None) if hasattr(world, "scenario") else None
    fast = grid is not None and getattr(me, "grid_ci", None) is not None
    own_s = me.proj_s if fast else arrays.project(me.x, me.y).arclength
    cache = getattr(world, "_xpath_cache", None)
    best: Optional[LeaderInfo] = None
    best_lead = math.inf
    for other in world.alive_agents():
        if other.agent_id == agent_id:
            continue
        if fast:
            if other.path_id == me.path_id:
                # Same path: the candidate's own cached projection is
                # the full-range answer (same arrays, same formula).
                lead = other.proj_s - own_s
                if lead <= 0.0 or lead > LEADER_SEARCH_RADIUS or lead >= best_lead:
                    continue
                if _segment_distance(arrays, other.proj_k, other.x, other.y) > half_lane:
                    continue
            else:
                if not (other.grid_mask >> me.path_id) & 1:
                    # No grid bit: farther than the grid reach, which
                    # exceeds every half lane width.
                    continue
                key = (other.agent_id, me.path_id)
                hit = None if cache is None else cache.get(key)
                if hit is None:
                    best_d2 = math.inf
                    s_other = 0.0
                    for lo, hi in grid.ranges_at(other.grid_ci, me.path_id):
                        d2, t, k = arrays.nearest_range_scalar(
                            other.x, other.y, lo, hi
                        )
                        if d2 < best_d2:
                            best_d2 = d2
                            s_other = arrays.cum_f[k] + t
                    dist = math.sqrt(best_d2)
                    if cache is not None:
                        cache[key] = (dist, s_other)
                else:
                    dist, s_other = hit
                if dist > half_lane:
                    continue
                lead = s_other - own_s
                if lead <= 0.0 or lead > LEADER_SEARCH_RADIUS or lead >= best_lead:
                    continue
        else:
            dist, s_other, _, _ = arrays.nearest_window(
                other.x, other.y, 0, arrays.n_seg
            )
            lead = s_other - own_s
            if lead <= 0.0 or lead > LEADER_SEARCH_RADIUS:
                continue
            if dist > half_lane:
                continue
            if lead >= best_lead:
                continue
        best_lead = lead
        gap = lead - 0.5 * (me.params.length + other.params.length)
        best = LeaderInfo(other.agent_id, gap, other.speed)
    return best


def pure_pursuit_steer(
    x: float,
    y: float,
    theta: float,
    arrays,
    s_self: float,
    wheelbase: float,
    sigma_max: float,
    lookahead: float = PURSUIT_LOOKAHEAD,
) -> float:
    """Steering angle toward the path point ``lookahead`` meters ahead.

    The target arclength clamps at the path end; a target coincident
    with the rear axle yields zero steering.
    """
    tx, ty, _ = arrays.point_at(s_self + lookahead)
    dx = tx - x
    dy = ty - y
    c = math.cos(theta)
    s = math.sin(theta)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    dist = math.hypot(lx, ly)
    if dist < 1e-9:
        return 0.0
    alpha = math.atan2(ly, lx)
    sigma = math.atan2(2.0 * wheelbase * math.sin(alpha), dist)
    if sigma > sigma_max:
        return sigma_max
    if sigma < -sigma_max:
        return -sigma_max
    return sigma
