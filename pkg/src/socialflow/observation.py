"""Per-agent partial observations.

An observation is a set of polylines expressed in the observer's frame:
one history polyline per visible agent (exactly H dynamic vectors each)
plus the clipped static map (centerlines, sidelines, and the observer's
own global path; other agents' paths are never exposed).  A second
builder produces the adversary's view: the visibility of one background
agent, re-expressed in the ego agent's frame, with the ego polyline
flagged.

Visibility: an agent is visible when its current position lies within
clip_radius of the observation center; its whole history then enters.
Static polylines are clipped vector by vector against the same radius,
so a long centerline contributes only its nearby vertices (original
vertex indices are preserved).  The observer's own history is always
present regardless of distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import (
    DynamicVector,
    Polyline,
    PolylineKind,
    Pose2D,
    StaticVector,
    norm_angle,
)

EGO_ID = 1


class AgentTerminated(RuntimeError):
    """Observation requested for an agent that is no longer alive."""


class EgoTerminated(RuntimeError):
    """Adversary observation requested while the ego agent is gone."""


class MissingContext(KeyError):
    """Delivered context lacks an entry for a visible agent."""


@dataclass
class ObservationFrame:
    """Polyline set in observer coordinates.

    ``agent_polylines[i]`` is the history of ``agent_ids[i]``;
    ``self_index`` locates the observing agent's own polyline and
    ``ego_index`` (adversary observations only) the ego agent's, or None
    when the ego is out of visible range.
    """

    agent_polylines: List[Polyline]
    agent_ids: List[int]
    static_polylines: List[Polyline]
    frame: Pose2D
    self_index: int
    ego_index: Optional[int] = None

    def to_arrays(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Serialize to float32: dynamic H x (5|6) rows, static K x 5 rows.

        Dynamic field order [x, y, theta, v, h, (svo)]; static
        [x, y, theta, lane_width, index].
        """
        dyn = []
        for poly in self.agent_polylines:
            rows = [
                [v.x, v.y, v.theta, v.speed, v.h]
                + ([] if v.svo is None else [v.svo])
                for v in poly.vectors
            ]
            dyn.append(np.asarray(rows, dtype=np.float32))
        static = []
        for poly in self.static_polylines:
            rows = [[v.x, v.y, v.theta, v.lane_width, v.index] for v in poly.vectors]
            static.append(np.asarray(rows, dtype=np.float32))
        return dyn, static


class _Frame:
    """Precomputed world-to-local transform."""

    __slots__ = ("pose", "cos", "sin")

    def __init__(self, pose: Pose2D):
        self.pose = pose
        self.cos = math.cos(pose.theta)
        self.sin = math.sin(pose.theta)

    def local_xy(self, x: float, y: float):
        dx = x - self.pose.x
        dy = y - self.pose.y
        return self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy

    def local_theta(self, theta: float) -> float:
        return norm_angle(theta - self.pose.theta)


def _history_polyline(agent, fr: _Frame) -> Polyline:
    """Agent history in frame coordinates; h = 1 is the current step."""
    vectors = []
    for age, (x, y, theta, speed) in enumerate(agent.history):
        lx, ly = fr.local_xy(x, y)
        vectors.append(DynamicVector(lx, ly, fr.local_theta(theta), speed, float(age + 1)))
    return Polyline(PolylineKind.AGENT_HISTORY, vectors)


def _clipped_static(poly: Polyline, fr: _Frame, cx, cy, clip_radius) -> Optional[Polyline]:
    """Vectors of ``poly`` within the radius of (cx, cy), in frame coords."""
    r2 = clip_radius * clip_radius
    kept = []
    for v in poly.vectors:
        dx = v.x - cx
        dy = v.y - cy
        if dx * dx + dy * dy <= r2:
            lx, ly = fr.local_xy(v.x, v.y)
            kept.append(
                StaticVector(lx, ly, fr.local_theta(v.theta), v.lane_width, v.index)
            )
    if not kept:
        return None
    # Clipping may leave gaps between surviving vertices, so the spacing
    # rule is waived; original indices keep their order.
    return Polyline(poly.kind, kept, max_spacing=math.inf)


def _visible_sorted_agents(world, center_agent) -> List:
    """Center agent first, then other visible alive agents by id."""
    clip = world.episode_config.clip_radius
    r2 = clip * clip
    out = [center_agent]
    for other in world.alive_agents():
        if other.agent_id == center_agent.agent_id:
            continue
        dx = other.x - center_agent.x
        dy = other.y - center_agent.y
        if dx * dx + dy * dy <= r2:
            out.append(other)
    out[1:] = sorted(out[1:], key=lambda a: a.agent_id)
    return out


def _static_set(world, center_agent, fr: _Frame) -> List[Polyline]:
    """Clipped map around the center agent: centerlines, sidelines, own path.

    Ordering is deterministic: centerlines by id, then sidelines by id,
    then the center agent's own global path (kind order matches).
    """
    clip = world.episode_config.clip_radius
    cx, cy = center_agent.x, center_agent.y
    scenario = world.scenario
    polys: List[Polyline] = []
    for group in (scenario.centerlines, scenario.sidelines):
        for poly in group:
            clipped = _clipped_static(poly, fr, cx, cy, clip)
            if clipped is not None:
                polys.append(clipped)
    own_path = scenario.paths[center_agent.path_id].polyline
    clipped = _clipped_static(own_path, fr, cx, cy, clip)
    if clipped is not None:
        polys.append(clipped)
    return polys


def build_observation(agent_id: int, world) -> ObservationFrame:
    """Observation of one alive agent, in its own frame."""
    agent = world.agents[agent_id]
    if not agent.is_alive():
        raise AgentTerminated(f"agent {agent_id} is {agent.status.name}")
    fr = _Frame(Pose2D(agent.x, agent.y, agent.theta))
    visible = _visible_sorted_agents(world, agent)
    return ObservationFrame(
        agent_polylines=[_history_polyline(a, fr) for a in visible],
        agent_ids=[a.agent_id for a in visible],
        static_polylines=_static_set(world, agent, fr),
        frame=fr.pose,
        self_index=0,
    )


def build_adversary_observation(background_id: int, world) -> ObservationFrame:
    """The background agent's visibility re-expressed in the ego frame.

    Content rules match :func:`build_observation` for the background
    agent (its visibility radius, its map clip, its own path), but every
    vector is transformed into the ego agent's coordinate system and the
    ego polyline's index is recorded.  Dynamic vectors stay at length 5:
    the adversary never sees genuine SVO values.
    """
    ego = world.agents.get(EGO_ID)
    if ego is None or not ego.is_alive():
        raise EgoTerminated("adversary observation requires a live ego agent")
    agent = world.agents[background_id]
    if not agent.is_alive():
        raise AgentTerminated(f"agent {background_id} is {agent.status.name}")
    fr = _Frame(Pose2D(ego.x, ego.y, ego.theta))
    visible = _visible_sorted_agents(world, agent)
    agent_ids = [a.agent_id for a in visible]
    return ObservationFrame(
        agent_polylines=[_history_polyline(a, fr) for a in visible],
        agent_ids=agent_ids,
        static_polylines=_static_set(world, agent, fr),
        frame=fr.pose,
        self_index=0,
        ego_index=agent_ids.index(EGO_ID) if EGO_ID in agent_ids else None,
    )


def attach_context(obs: ObservationFrame, delivered) -> ObservationFrame:
    """Attach delivered SVO values to every dynamic vector.

    ``delivered`` maps agent ids to degrees (a DeliveredContext or any
    carrier with an ``entries`` dict).  Geometry is untouched; each
    dynamic vector only gains its agent's svo field, so the serialized
    dynamic width grows from 5 to 6.
    """
    entries: Dict[int, float] = getattr(delivered, "entries", delivered)
    new_polys = []
    for aid, poly in zip(obs.agent_ids, obs.agent_polylines):
        if aid not in entries:
            raise MissingContext(aid)
        svo = float(entries[aid])
        new_polys.append(
            Polyline(
                PolylineKind.AGENT_HISTORY,
                [replace(v, svo=svo) for v in poly.vectors],
            )
        )
    return ObservationFrame(
        agent_polylines=new_polys,
        agent_ids=list(obs.agent_ids),
        static_polylines=obs.static_polylines,
        frame=obs.frame,
        self_index=obs.self_index,
        ego_index=obs.ego_index,
    )
