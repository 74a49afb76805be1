"""Contextual multi-agent episode engine.

``reset`` places agents from a case, ``step`` advances every live agent
simultaneously off the pre-step snapshot (PID speed loop into the
kinematic bicycle), classifies terminations under a fixed priority,
composes rewards socially, and removes terminated agents from the
world.  The integrated reference point (x, y) doubles as the footprint
center; the wheelbase only shapes the yaw rate.

Episodes are bit-deterministic: identical case, config, and action
streams reproduce identical state sequences, and nothing in the engine
reads wall clock, process ids, or global RNG state.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import partial
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .dynamics import (
    PidMemory,
    PidParams,
    VehicleParams,
    bicycle_scalar,
    pid_speed_control,
)
from .geometry import (
    OrientedBox,
    Pose2D,
    boxes_overlap,
    norm_angle,
)
from .observation import EGO_ID, build_observation
from .reward import (
    RewardBreakdown,
    RewardWeights,
    adversary_reward,
    failmaker_background_reward,
    failmaker_individual_reward,
    individual_reward,
    socially_composed_reward,
)
from .scenario import CaseSpec, ScenarioSpec
from .seeding import splitmix64

# Width of the warm-start projection window, segments to each side of
# the cached nearest segment.  At the 2 m default vector spacing the
# window spans well past the validated no-self-approach margin, so a
# windowed result with a small lateral offset is already the global one.
_PROJ_WINDOW = 8

# Cached-projection trust bound, meters.  Scenario validation ensures a
# path never re-approaches itself closer than ~7.8 m, so any projection
# within this lateral distance cannot be beaten by a remote segment.
_PROJ_TRUST = 2.8


class CaseMismatch(ValueError):
    """The case does not belong to, or is inconsistent with, the scenario."""


class MissingAction(KeyError):
    """step was called without an action for an alive agent."""


class AlreadyDone(RuntimeError):
    """step was called after the episode finished."""


class EnvMode(Enum):
    FLOW = "flow"
    EGO_VS_FLOW = "ego_vs_flow"


class TerminationStatus(IntEnum):
    """Per-agent episode outcome; the order encodes classification priority."""

    ALIVE = 0
    COLLISION = 1
    OFF_ROAD = 2
    OFF_ROUTE = 3
    WRONG_LANE = 4
    SUCCESS = 5
    TIMEOUT = 6


# Terminal statuses that carry the failure penalty.
FAILURE_STATUSES = frozenset(
    {
        TerminationStatus.COLLISION,
        TerminationStatus.OFF_ROAD,
        TerminationStatus.OFF_ROUTE,
        TerminationStatus.WRONG_LANE,
    }
)

TERMINAL_STATUSES = FAILURE_STATUSES | {
    TerminationStatus.SUCCESS,
    TerminationStatus.TIMEOUT,
}


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode-level constants shared by every agent."""

    dt: float = 0.1
    max_steps: int = 500
    clip_radius: float = 30.0
    history_len: int = 10
    off_route_threshold: float = 4.0
    wrong_lane_heading_deg: float = 120.0
    wrong_lane_persistence: int = 10
    weights: RewardWeights = field(default_factory=RewardWeights)
    pid: PidParams = field(default_factory=PidParams)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.clip_radius <= 0.0:
            raise ValueError("clip_radius must be positive")
        if self.history_len < 1:
            raise ValueError("history_len must be at least 1")
        if self.off_route_threshold <= 0.0:
            raise ValueError("off_route_threshold must be positive")
        if not 0.0 < self.wrong_lane_heading_deg < 180.0:
            raise ValueError("wrong_lane_heading_deg must lie in (0, 180)")
        if self.wrong_lane_persistence < 1:
            raise ValueError("wrong_lane_persistence must be at least 1")


class AgentRecord:
    """Mutable per-agent simulation state.

    ``history`` holds the last H (x, y, theta, speed) tuples newest
    first; ``proj_*`` cache the agent's projection onto its own global
    path and are refreshed every step.
    """

    __slots__ = (
        "agent_id",
        "path_id",
        "path",
        "params",
        "genuine_svo",
        "is_ego",
        "x",
        "y",
        "theta",
        "speed",
        "status",
        "terminal_step",
        "history",
        "pid_memory",
        "proj_s",
        "proj_lat",
        "proj_k",
        "grid_ci",
        "grid_mask",
        "corn",
        "wrong_lane_steps",
        "half_diag",
        "exit_s",
    )

    def __init__(self, init, path, params: VehicleParams, history_len: int):
        self.agent_id = init.agent_id
        self.path_id = init.path_id
        self.path = path
        self.params = params
        self.genuine_svo = float(init.svo_deg)
        self.is_ego = False
        self.x = float(init.x)
        self.y = float(init.y)
        self.theta = float(init.theta)
        self.speed = float(init.speed)
        self.status = TerminationStatus.ALIVE
        self.terminal_step = -1
        self.history = deque(
            [(self.x, self.y, self.theta, self.speed)] * history_len,
            maxlen=history_len,
        )
        self.pid_memory = PidMemory()
        s, lat, _, k = path.arrays.project_window(self.x, self.y, 0, path.arrays.n_seg)
        self.proj_s = s
        self.proj_lat = lat
        self.proj_k = k
        self.grid_ci = -1
        self.grid_mask = 0
        _refresh_corners(self)
        self.wrong_lane_steps = 0
        self.half_diag = 0.5 * math.hypot(params.length, params.width)
        self.exit_s = path.exit_arclength

    def is_alive(self) -> bool:
        return self.status is TerminationStatus.ALIVE

    def footprint(self) -> OrientedBox:
        return OrientedBox(
            Pose2D(self.x, self.y, self.theta), self.params.length, self.params.width
        )


@dataclass(frozen=True)
class AgentStepResult:
    """One agent's slice of a step outcome.

    ``observation`` lazily builds the post-step observation and is only
    present while the agent stays alive; it must be invoked before the
    world advances again.
    """

    breakdown: RewardBreakdown
    new_status: TerminationStatus
    observation: Optional[Callable[[], object]] = field(default=None, compare=False)


@dataclass(frozen=True)
class StepOutcome:
    step: int
    per_agent: Dict[int, AgentStepResult]
    episode_done: bool


@dataclass
class WorldState:
    """Full simulator state owned by exactly one rollout at a time."""

    scenario: ScenarioSpec
    case: CaseSpec
    mode: EnvMode
    episode_config: EpisodeConfig
    agents: Dict[int, AgentRecord]
    roster_ids: Tuple[int, ...]
    step_count: int = 0
    rng_state: int = 0
    episode_done: bool = False
    _alive: List[AgentRecord] = field(default_factory=list, repr=False)
    _n_paths: int = 0
    _cl_half_widths: Tuple[float, ...] = ()
    # Per-step memo of cross-path corridor queries, (agent_id, path_id)
    # -> (distance, arclength); invalidated whenever anyone moves.
    _xpath_cache: Dict[Tuple[int, int], Tuple[float, float]] = field(
        default_factory=dict, repr=False
    )

    def alive_agents(self) -> List[AgentRecord]:
        """Alive agents in ascending id order; treat as read-only."""
        return self._alive


def reset(
    scenario: ScenarioSpec,
    case: CaseSpec,
    mode: EnvMode = EnvMode.FLOW,
    config: Optional[EpisodeConfig] = None,
) -> WorldState:
    """Fresh world with agents placed per the case.

    Histories are pre-filled with ``history_len`` copies of the initial
    dynamic state.  Raises CaseMismatch when the case names a different
    scenario, references unknown paths, or its poses already overlap.
    """
    cfg = config if config is not None else EpisodeConfig()
    if case.scenario != scenario.name:
        raise CaseMismatch(
            f"case is for scenario {case.scenario!r}, loaded {scenario.name!r}"
        )
    if not case.agents:
        raise CaseMismatch("case places no agents")
    agents: Dict[int, AgentRecord] = {}
    for init in case.agents:
        if init.agent_id in agents:
            raise CaseMismatch(f"duplicate agent id {init.agent_id}")
        if not 0 <= init.path_id < len(scenario.paths):
            raise CaseMismatch(f"agent {init.agent_id}: unknown path {init.path_id}")
        if not -90.0 <= init.svo_deg <= 90.0:
            raise CaseMismatch(
                f"agent {init.agent_id}: svo {init.svo_deg} outside [-90, 90]"
            )
        if not 0.0 <= init.speed <= scenario.vehicle.v_max:
            raise CaseMismatch(f"agent {init.agent_id}: speed {init.speed} out of range")
        rec = AgentRecord(
            init, scenario.paths[init.path_id], scenario.vehicle, cfg.history_len
        )
        ci = scenario.grid.cell_index(rec.x, rec.y)
        rec.grid_ci = ci
        rec.grid_mask = scenario.grid.masks[ci] if ci >= 0 else 0
        agents[init.agent_id] = rec
    if mode is EnvMode.EGO_VS_FLOW:
        if EGO_ID not in agents:
            raise CaseMismatch(f"ego mode requires agent {EGO_ID}")
        agents[EGO_ID].is_ego = True
    alive = [agents[aid] for aid in sorted(agents)]
    for i, a in enumerate(alive):
        for b in alive[i + 1 :]:
            rr = a.half_diag + b.half_diag
            if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > rr * rr:
                continue
            if boxes_overlap(a.footprint(), b.footprint()):
                raise CaseMismatch(
                    f"initial footprints of agents {a.agent_id} and {b.agent_id} overlap"
                )
    return WorldState(
        scenario=scenario,
        case=case,
        mode=mode,
        episode_config=cfg,
        agents=agents,
        roster_ids=tuple(sorted(agents)),
        rng_state=case.seed & 0xFFFFFFFFFFFFFFFF,
        _alive=alive,
        _n_paths=len(scenario.paths),
        _cl_half_widths=tuple(
            0.5 * max(v.lane_width for v in c.vectors) for c in scenario.centerlines
        ),
    )


def _refresh_projection(agent: AgentRecord, grid):
    """Update the cached own-path projection and broad-phase grid cell.

    The warm-start window is exact whenever its argmin is interior and
    the lateral offset stays within the no-self-approach margin; any
    other outcome falls back to the full projection.
    """
    arrays = agent.path.arrays
    n = arrays.n_seg
    lo = agent.proj_k - _PROJ_WINDOW
    if lo < 0:
        lo = 0
    hi = agent.proj_k + _PROJ_WINDOW + 1
    if hi > n:
        hi = n
    s, lat, k = arrays.project_range_scalar(agent.x, agent.y, lo, hi)
    if (
        (k == lo and lo > 0)
        or (k == hi - 1 and hi < n)
        or lat > _PROJ_TRUST
        or lat < -_PROJ_TRUST
    ):
        s, lat, _, k = arrays.project_window(agent.x, agent.y, 0, n)
    agent.proj_s = s
    agent.proj_lat = lat
    agent.proj_k = k
    ci = grid.cell_index(agent.x, agent.y)
    agent.grid_ci = ci
    agent.grid_mask = grid.masks[ci] if ci >= 0 else 0


def _refresh_corners(agent: AgentRecord):
    """Cache footprint corners and heading cosines for the current pose.

    The flat layout is (x0, y0, ..., x3, y3, cos, sin) with corners
    counterclockwise from front-left; the arithmetic matches
    OrientedBox.corners() bit for bit so cached and fresh footprints
    always agree.
    """
    c = math.cos(agent.theta)
    s = math.sin(agent.theta)
    hl = 0.5 * agent.params.length
    hw = 0.5 * agent.params.width
    lx = c * hl
    ly = s * hl
    wx = -s * hw
    wy = c * hw
    x = agent.x
    y = agent.y
    agent.corn = (
        x + lx + wx, y + ly + wy,
        x - lx + wx, y - ly + wy,
        x - lx - wx, y - ly - wy,
        x + lx - wx, y + ly - wy,
        c, s,
    )


def _sat_overlap(ca, cb) -> bool:
    """Separating-axis test on two cached corner tuples.

    Decision-identical to boxes_overlap on the same rectangles: both
    test the two edge normals of each box and treat touching as overlap.
    """
    for ux, uy in (
        (ca[8], ca[9]), (-ca[9], ca[8]),
        (cb[8], cb[9]), (-cb[9], cb[8]),
    ):
        p0 = ca[0] * ux + ca[1] * uy
        p1 = ca[2] * ux + ca[3] * uy
        p2 = ca[4] * ux + ca[5] * uy
        p3 = ca[6] * ux + ca[7] * uy
        amin = p0 if p0 < p1 else p1
        amax = p0 if p0 > p1 else p1
        if p2 < amin:
            amin = p2
        elif p2 > amax:
            amax = p2
        if p3 < amin:
            amin = p3
        elif p3 > amax:
            amax = p3
        q0 = cb[0] * ux + cb[1] * uy
        q1 = cb[2] * ux + cb[3] * uy
        q2 = cb[4] * ux + cb[5] * uy
        q3 = cb[6] * ux + cb[7] * uy
        bmin = q0 if q0 < q1 else q1
        bmax = q0 if q0 > q1 else q1
        if q2 < bmin:
            bmin = q2
        elif q2 > bmax:
            bmax = q2
        if q3 < bmin:
            bmin = q3
        elif q3 > bmax:
            bmax = q3
        if amax < bmin or bmax < amin:
            return False
    return True


def _collision_ids(alive: List[AgentRecord]) -> frozenset:
    """Ids of all alive agents whose footprints overlap some other's."""
    hit = set()
    n = len(alive)
    for i in range(n):
        a = alive[i]
        for j in range(i + 1, n):
            b = alive[j]
            rr = a.half_diag + b.half_diag
            dx = a.x - b.x
            dy = a.y - b.y
            if dx * dx + dy * dy > rr * rr:
                continue
            if _sat_overlap(a.corn, b.corn):
                hit.add(a.agent_id)
                hit.add(b.agent_id)
    return frozenset(hit)


def _outside_corner_flags(world: WorldState, alive: List[AgentRecord]) -> np.ndarray:
    """Boolean per alive agent: some footprint corner left the road."""
    n = len(alive)
    corners = np.empty((4 * n, 2), dtype=float)
    for i, a in enumerate(alive):
        corners[4 * i : 4 * i + 4] = np.asarray(a.corn[:8]).reshape(4, 2)
    inside = world.scenario.drivable_union.contains(corners)
    return ~inside.reshape(n, 4).all(axis=1)


def _in_misaligned_corridor(world: WorldState, agent: AgentRecord) -> bool:
    """True when the agent center sits inside some centerline corridor
    whose local direction opposes the agent heading beyond the limit."""
    ci = agent.grid_ci
    if ci < 0:
        return False
    mask = agent.grid_mask >> world._n_paths
    if mask == 0:
        return False
    grid = world.scenario.grid
    limit = math.radians(world.episode_config.wrong_lane_heading_deg)
    arrays = world.scenario.centerline_arrays
    j = 0
    while mask:
        if mask & 1:
            half_w = world._cl_half_widths[j]
            pa = arrays[j]
            for lo, hi in grid.ranges_at(ci, world._n_paths + j):
                d2, _, k = pa.nearest_range_scalar(agent.x, agent.y, lo, hi)
                if math.sqrt(d2) <= half_w:
                    heading = math.atan2(pa.uy_f[k], pa.ux_f[k])
                    if abs(norm_angle(agent.theta - heading)) > limit:
                        return True
        mask >>= 1
        j += 1
    return False


def classify_termination(agent: AgentRecord, world: WorldState) -> TerminationStatus:
    """Status of one alive agent on the current (post-move) world.

    Priority when several conditions co-occur: collision > off_road >
    off_route > wrong_lane > success > timeout > alive.  Reads the
    agent's cached projection and wrong-lane counter, both maintained by
    ``step``; inside a step this runs before any removal, so same-step
    collision partners still count.
    """
    if not agent.is_alive():
        raise ValueError(f"agent {agent.agent_id} is already {agent.status.name}")
    box = None
    for other in world.alive_agents():
        if other.agent_id == agent.agent_id:
            continue
        rr = agent.half_diag + other.half_diag
        dx = agent.x - other.x
        dy = agent.y - other.y
        if dx * dx + dy * dy > rr * rr:
            continue
        if box is None:
            box = agent.footprint()
        if boxes_overlap(box, other.footprint()):
            return TerminationStatus.COLLISION
    corners = (box if box is not None else agent.footprint()).corners()
    if not world.scenario.drivable_union.contains(corners).all():
        return TerminationStatus.OFF_ROAD
    cfg = world.episode_config
    if abs(agent.proj_lat) > cfg.off_route_threshold:
        return TerminationStatus.OFF_ROUTE
    if agent.wrong_lane_steps >= cfg.wrong_lane_persistence:
        return TerminationStatus.WRONG_LANE
    if agent.proj_s > agent.exit_s:
        return TerminationStatus.SUCCESS
    if world.step_count >= cfg.max_steps:
        return TerminationStatus.TIMEOUT
    return TerminationStatus.ALIVE


def _read_action(joint_actions: Mapping[int, object], agent: AgentRecord):
    try:
        act = joint_actions[agent.agent_id]
    except KeyError:
        raise MissingAction(agent.agent_id) from None
    v_ref = getattr(act, "v_ref", None)
    if v_ref is None:
        v_ref, sigma = float(act[0]), float(act[1])
    else:
        v_ref, sigma = float(v_ref), float(act.sigma)
    v_max = agent.params.v_max
    if v_ref < 0.0:
        v_ref = 0.0
    elif v_ref > v_max:
        v_ref = v_max
    return v_ref, sigma


def step(
    world: WorldState, joint_actions: Mapping[int, object]
) -> Tuple[WorldState, StepOutcome]:
    """Advance every alive agent one tick; returns the mutated world.

    Actions may be Action instances or (v_ref, sigma) pairs; v_ref is
    clamped to [0, v_max] on ingestion and entries for non-alive ids are
    ignored.  All agents move off the pre-step snapshot, then
    termination is classified on the post-move world, then rewards are
    composed from post-move speeds and terminal events, and finally the
    newly terminated agents leave the world.
    """
    if world.episode_done:
        raise AlreadyDone("episode already finished")
    cfg = world.episode_config
    grid = world.scenario.grid
    alive = world._alive
    acts = [_read_action(joint_actions, a) for a in alive]

    for a, (v_ref, sigma) in zip(alive, acts):
        p = a.params
        accel = pid_speed_control(a.speed, v_ref, cfg.pid, a.pid_memory, cfg.dt)
        a.x, a.y, a.theta, a.speed = bicycle_scalar(
            a.x,
            a.y,
            a.theta,
            a.speed,
            accel,
            sigma,
            cfg.dt,
            p.wheelbase,
            p.v_max,
            p.sigma_max,
        )
        a.history.appendleft((a.x, a.y, a.theta, a.speed))
        _refresh_projection(a, grid)
        _refresh_corners(a)

    world._xpath_cache.clear()
    world.step_count += 1
    world.rng_state = splitmix64(world.rng_state)

    in_collision = _collision_ids(alive)
    outside = _outside_corner_flags(world, alive)
    newly: Dict[int, TerminationStatus] = {}
    for i, a in enumerate(alive):
        if _in_misaligned_corridor(world, a):
            a.wrong_lane_steps += 1
        else:
            a.wrong_lane_steps = 0
        if a.agent_id in in_collision:
            status = TerminationStatus.COLLISION
        elif outside[i]:
            status = TerminationStatus.OFF_ROAD
        elif abs(a.proj_lat) > cfg.off_route_threshold:
            status = TerminationStatus.OFF_ROUTE
        elif a.wrong_lane_steps >= cfg.wrong_lane_persistence:
            status = TerminationStatus.WRONG_LANE
        elif a.proj_s > a.exit_s:
            status = TerminationStatus.SUCCESS
        elif world.step_count >= cfg.max_steps:
            status = TerminationStatus.TIMEOUT
        else:
            continue
        newly[a.agent_id] = status

    individuals: Dict[int, float] = {}
    partials: Dict[int, RewardBreakdown] = {}
    for a in alive:
        failed = newly.get(a.agent_id) in FAILURE_STATUSES
        bd = individual_reward(a.speed, a.params.v_max, failed, cfg.weights)
        individuals[a.agent_id] = bd.individual
        partials[a.agent_id] = bd

    # Ego contribution for attacker composition and the zero-sum signal;
    # an ego terminated on an earlier step contributes 0 like any other
    # removed agent.
    ego_individual = individuals.get(EGO_ID, 0.0)
    adv_signal = (
        adversary_reward(ego_individual) if world.mode is EnvMode.EGO_VS_FLOW else None
    )
    roster = world.roster_ids
    n_total = len(roster)
    per_agent: Dict[int, AgentStepResult] = {}
    for a in alive:
        aid = a.agent_id
        bd = partials[aid]
        if a.genuine_svo < 0.0:
            own = failmaker_individual_reward(
                bd.individual,
                newly.get(aid) is TerminationStatus.COLLISION,
                cfg.weights,
            )
            composed = failmaker_background_reward(own, ego_individual, a.genuine_svo)
            bd = replace(
                bd, individual=own, composed=composed, adversary_signal=adv_signal
            )
        else:
            if n_total > 1:
                others = [individuals.get(j, 0.0) for j in roster if j != aid]
                composed = socially_composed_reward(
                    bd.individual, others, a.genuine_svo
                )
            else:
                composed = bd.individual
            bd = replace(bd, composed=composed, adversary_signal=adv_signal)
        partials[aid] = bd

    for aid, status in newly.items():
        rec = world.agents[aid]
        rec.status = status
        rec.terminal_step = world.step_count
    if newly:
        world._alive = [a for a in alive if a.status is TerminationStatus.ALIVE]
        world.episode_done = not world._alive

    for a in alive:
        aid = a.agent_id
        status = newly.get(aid, TerminationStatus.ALIVE)
        handle = None
        if status is TerminationStatus.ALIVE:
            handle = partial(build_observation, aid, world)
        per_agent[aid] = AgentStepResult(partials[aid], status, handle)

    return world, StepOutcome(
        step=world.step_count, per_agent=per_agent, episode_done=world.episode_done
    )
