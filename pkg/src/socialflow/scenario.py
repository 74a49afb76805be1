"""Scenario documents, validation, and deterministic case generation.

A scenario bundles the static world of one map: lane centerlines and
side lines, the drivable area, the interaction zone where routes
conflict, spawn slots, and the candidate global paths agents can
follow.  Scenarios are authored as versioned YAML documents; loading
validates geometry hard enough that the engine can rely on it without
rechecking.  A case instantiates a scenario with concrete agents:
spawn placement, initial speeds, and genuine social value orientation
angles, generated reproducibly from a master seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .dynamics import VehicleParams
from .idm import IdmParams
from .geometry import (
    OrientedBox,
    PathArrays,
    PolygonUnion,
    Polyline,
    PolylineKind,
    Pose2D,
    StaticVector,
    boxes_overlap,
    points_in_polygons,
)
from .seeding import derive_seed

SCENARIO_FORMAT_VERSION = 1
CASES_FORMAT_VERSION = 1

# Longitudinal spawn jitter half-range, meters.
SPAWN_JITTER = 2.0

# Maximum placement retries per case before giving up.
MAX_PLACEMENT_ATTEMPTS = 1000

# Paths must not come back near themselves: any two path points whose
# arclength separation is at least SELF_APPROACH_ARCLEN must be at
# least SELF_APPROACH_DIST apart.  The windowed projection used by the
# engine is provably exact under this bound.
SELF_APPROACH_ARCLEN = 8.5
SELF_APPROACH_DIST = 7.8


class ParseError(ValueError):
    """Document is not structurally a scenario or case file."""


class ValidationError(ValueError):
    """Document parsed but violates a scenario invariant."""


class PlacementError(RuntimeError):
    """Rejection sampling could not place agents without overlap."""


@dataclass
class SpawnSlot:
    pose: Pose2D
    path_id: int
    arclength: float = 0.0  # filled at load: position along the path


@dataclass
class CandidatePath:
    """One drivable route: polyline, fast arrays, and exit arclength.

    ``exit_arclength`` is the arclength of the last path vertex inside
    the interaction zone; progress beyond it counts as having passed
    through the zone.
    """

    path_id: int
    polyline: Polyline
    lane_width: float
    arrays: PathArrays = field(repr=False, default=None)
    exit_arclength: float = 0.0


class PolylineGrid:
    """Uniform broad-phase grid over a set of polylines.

    For every cell the grid knows which polylines pass within ``reach``
    meters and which of their segment ranges are nearby.  Queries are
    conservative (may return extra segments) but complete: every segment
    within ``reach`` of a point is always among the candidates for that
    point's cell, which keeps windowed projections exact.
    """

    def __init__(self, entries: Sequence[PathArrays], reach: float, cell: float = 4.0):
        self.reach = reach
        self.cell = cell
        xs = []
        ys = []
        for pa in entries:
            xs.append(pa.points[:, 0])
            ys.append(pa.points[:, 1])
        allx = np.concatenate(xs)
        ally = np.concatenate(ys)
        pad = reach + 2.0 * cell
        self.x0 = float(allx.min()) - pad
        self.y0 = float(ally.min()) - pad
        self.nx = int(math.ceil((float(allx.max()) + pad - self.x0) / cell))
        self.ny = int(math.ceil((float(ally.max()) + pad - self.y0) / cell))
        self.masks = [0] * (self.nx * self.ny)
        # cell index -> entry id -> list of (lo, hi) segment ranges
        self.candidates: Dict[int, Dict[int, List[Tuple[int, int]]]] = {}
        half_diag = 0.5 * math.hypot(cell, cell)
        mark = reach + half_diag + 1e-6
        for eid, pa in enumerate(entries):
            per_cell: Dict[int, List[int]] = {}
            for k in range(pa.n_seg):
                x1, y1 = pa.ax[k], pa.ay[k]
                x2 = x1 + pa.seg_len[k] * pa.ux[k]
                y2 = y1 + pa.seg_len[k] * pa.uy[k]
                lox = int((min(x1, x2) - mark - self.x0) / cell)
                hix = int((max(x1, x2) + mark - self.x0) / cell)
                loy = int((min(y1, y2) - mark - self.y0) / cell)
                hiy = int((max(y1, y2) + mark - self.y0) / cell)
                for cx in range(max(lox, 0), min(hix, self.nx - 1) + 1):
                    ccx = self.x0 + (cx + 0.5) * cell
                    for cy in range(max(loy, 0), min(hiy, self.ny - 1) + 1):
                        ccy = self.y0 + (cy + 0.5) * cell
                        if _point_segment_dist(ccx, ccy, x1, y1, x2, y2) <= mark:
                            per_cell.setdefault(cx * self.ny + cy, []).append(k)
            bit = 1 << eid
            for ci, ks in per_cell.items():
                self.masks[ci] |= bit
                ranges = _compress_ranges(ks)
                self.candidates.setdefault(ci, {})[eid] = ranges

    def cell_index(self, x: float, y: float) -> int:
        cx = int((x - self.x0) / self.cell)
        cy = int((y - self.y0) / self.cell)
        if cx < 0 or cx >= self.nx or cy < 0 or cy >= self.ny:
            return -1
        return cx * self.ny + cy

    def mask_at(self, x: float, y: float) -> int:
        ci = self.cell_index(x, y)
        if ci < 0:
            return 0
        return self.masks[ci]

    def ranges_at(self, cell_idx: int, entry_id: int) -> List[Tuple[int, int]]:
        if cell_idx < 0:
            return []
        per = self.candidates.get(cell_idx)
        if per is None:
            return []
        return per.get(entry_id, [])


def _point_segment_dist(px, py, x1, y1, x2, y2) -> float:
    dx = x2 - x1
    dy = y2 - y1
    len2 = dx * dx + dy * dy
    if len2 <= 0.0:
        return math.hypot(px - x1, py - y1)
    t = ((px - x1) * dx + (py - y1) * dy) / len2
    t = min(max(t, 0.0), 1.0)
    return math.hypot(px - (x1 + t * dx), py - (y1 + t * dy))


def _compress_ranges(ks: List[int]) -> List[Tuple[int, int]]:
    ranges = []
    start = prev = ks[0]
    for k in ks[1:]:
        if k == prev + 1:
            prev = k
            continue
        ranges.append((start, prev + 1))
        start = prev = k
    ranges.append((start, prev + 1))
    return ranges


@dataclass
class ScenarioSpec:
    """Validated static description of one traffic scene."""

    name: str
    centerlines: List[Polyline]
    sidelines: List[Polyline]
    drivable_area: List[np.ndarray]
    interaction_zone: np.ndarray
    lane_directions: List[float]
    spawn_slots: List[SpawnSlot]
    paths: List[CandidatePath]
    default_agent_count: int
    vehicle: VehicleParams
    max_vector_spacing: float = 2.0
    idm: IdmParams = field(default_factory=IdmParams)

    # Runtime acceleration structures, built once at load.
    centerline_arrays: List[PathArrays] = field(default_factory=list, repr=False)
    grid: Optional[PolylineGrid] = field(default=None, repr=False)
    grid_reach: float = field(default=0.0, repr=False)
    drivable_union: Optional[PolygonUnion] = field(default=None, repr=False)

    def path(self, path_id: int) -> CandidatePath:
        return self.paths[path_id]

    def build_runtime(self):
        """Precompute projection arrays, exit points, and the grid."""
        for p in self.paths:
            if p.arrays is None:
                p.arrays = PathArrays(p.polyline.points())
        self.centerline_arrays = [PathArrays(c.points()) for c in self.centerlines]
        for p in self.paths:
            pts = p.polyline.points()
            inside = points_in_polygons(pts, [self.interaction_zone])
            if inside.any():
                last = int(np.flatnonzero(inside)[-1])
                cum = np.concatenate(
                    ([0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T)))
                )
                p.exit_arclength = float(cum[last])
        half_widths = [0.5 * p.lane_width for p in self.paths]
        half_widths += [
            0.5 * max(v.lane_width for v in c.vectors) for c in self.centerlines
        ]
        self.grid_reach = max(half_widths) + 0.1
        entries = [p.arrays for p in self.paths] + self.centerline_arrays
        self.grid = PolylineGrid(entries, self.grid_reach)
        self.drivable_union = PolygonUnion(self.drivable_area)
        for slot in self.spawn_slots:
            proj = self.paths[slot.path_id].arrays.project(slot.pose.x, slot.pose.y)
            slot.arclength = proj.arclength


@dataclass(frozen=True)
class AgentInit:
    """Initial condition of one agent within a case."""

    agent_id: int
    path_id: int
    x: float
    y: float
    theta: float
    speed: float
    svo_deg: float


@dataclass(frozen=True)
class CaseSpec:
    scenario: str
    case_id: int
    seed: int
    agents: Tuple[AgentInit, ...]


def _require_keys(d: dict, required: Sequence[str], optional: Sequence[str], where: str):
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected a mapping, got {type(d).__name__}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ParseError(f"{where}: missing keys {missing}")
    unknown = [k for k in d if k not in required and k not in optional]
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")


def _as_float(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _static_polyline(entry: dict, kind: PolylineKind, where: str, max_spacing: float) -> Tuple[Polyline, float]:
    _require_keys(entry, ["points"], ["lane_width", "id"], where)
    lane_width = _as_float(entry.get("lane_width", 0.0), f"{where}.lane_width")
    pts = entry["points"]
    if not isinstance(pts, list) or len(pts) < 2:
        raise ValidationError(f"{where}: needs at least two points")
    vectors = []
    for i, row in enumerate(pts):
        if not isinstance(row, list) or len(row) != 3:
            raise ParseError(f"{where}.points[{i}]: expected [x, y, theta]")
        vectors.append(
            StaticVector(
                _as_float(row[0], where),
                _as_float(row[1], where),
                _as_float(row[2], where),
                lane_width,
                i,
            )
        )
    try:
        poly = Polyline(kind, vectors, max_spacing=max_spacing)
    except ValueError as e:
        raise ValidationError(f"{where}: {e}") from e
    return poly, lane_width


def _polygon(rows, where: str) -> np.ndarray:
    if not isinstance(rows, list) or len(rows) < 3:
        raise ValidationError(f"{where}: polygon needs at least three vertices")
    out = np.empty((len(rows), 2), dtype=float)
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 2:
            raise ParseError(f"{where}[{i}]: expected [x, y]")
        out[i, 0] = _as_float(row[0], where)
        out[i, 1] = _as_float(row[1], where)
    return out


def scenario_from_dict(doc: dict, name_hint: str = "") -> ScenarioSpec:
    """Build and validate a ScenarioSpec from a parsed document."""
    _require_keys(
        doc,
        [
            "format_version",
            "name",
            "default_agent_count",
            "vehicle",
            "centerlines",
            "sidelines",
            "drivable_area",
            "interaction_zone",
            "lane_directions",
            "spawn_slots",
            "candidate_paths",
        ],
        ["max_vector_spacing", "idm"],
        f"scenario {name_hint}",
    )
    version = doc["format_version"]
    if version != SCENARIO_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported scenario format_version {version!r}, expected {SCENARIO_FORMAT_VERSION}"
        )
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ParseError("scenario name must be a non-empty string")
    max_spacing = _as_float(doc.get("max_vector_spacing", 2.0), "max_vector_spacing")
    if max_spacing <= 0:
        raise ValidationError("max_vector_spacing must be positive")

    idm_params = IdmParams()
    if "idm" in doc:
        entry = doc["idm"]
        if not isinstance(entry, dict):
            raise ParseError("idm must be a mapping of IDM constants")
        _require_keys(entry, [], ["v0", "T", "s0", "delta", "a", "b"], "idm")
        merged = {k: _as_float(v, f"idm.{k}") for k, v in entry.items()}
        idm_params = replace(idm_params, **merged)
        if min(vars(idm_params).values()) <= 0.0:
            raise ValidationError("idm constants must all be positive")
        if idm_params.delta < 1.0:
            raise ValidationError("idm delta must be at least 1")

    veh = doc["vehicle"]
    _require_keys(
        veh,
        ["length", "width", "wheelbase", "v_max", "sigma_max", "accel_max"],
        [],
        "vehicle",
    )
    vehicle = VehicleParams(
        length=_as_float(veh["length"], "vehicle.length"),
        width=_as_float(veh["width"], "vehicle.width"),
        wheelbase=_as_float(veh["wheelbase"], "vehicle.wheelbase"),
        v_max=_as_float(veh["v_max"], "vehicle.v_max"),
        sigma_max=_as_float(veh["sigma_max"], "vehicle.sigma_max"),
        accel_max=_as_float(veh["accel_max"], "vehicle.accel_max"),
    )
    for f in ("length", "width", "wheelbase", "v_max", "sigma_max", "accel_max"):
        if getattr(vehicle, f) <= 0:
            raise ValidationError(f"vehicle.{f} must be positive")

    centerlines = []
    for i, entry in enumerate(doc["centerlines"]):
        poly, lw = _static_polyline(entry, PolylineKind.CENTERLINE, f"centerlines[{i}]", max_spacing)
        if lw <= 0:
            raise ValidationError(f"centerlines[{i}]: lane_width must be positive")
        centerlines.append(poly)
    if not centerlines:
        raise ValidationError("scenario needs at least one centerline")

    sidelines = [
        _static_polyline(entry, PolylineKind.SIDELINE, f"sidelines[{i}]", max_spacing)[0]
        for i, entry in enumerate(doc["sidelines"])
    ]

    drivable = [
        _polygon(rows, f"drivable_area[{i}]") for i, rows in enumerate(doc["drivable_area"])
    ]
    if not drivable:
        raise ValidationError("drivable_area must contain at least one polygon")
    zone = _polygon(doc["interaction_zone"], "interaction_zone")

    lane_dirs = doc["lane_directions"]
    if not isinstance(lane_dirs, list) or len(lane_dirs) != len(centerlines):
        raise ValidationError(
            f"lane_directions must list one heading per centerline "
            f"({len(centerlines)} expected)"
        )
    lane_directions = [_as_float(v, f"lane_directions[{i}]") for i, v in enumerate(lane_dirs)]

    paths = []
    for i, entry in enumerate(doc["candidate_paths"]):
        _require_keys(entry, ["id", "points", "lane_width"], [], f"candidate_paths[{i}]")
        pid = entry["id"]
        if pid != i:
            raise ValidationError(
                f"candidate_paths[{i}]: ids must be consecutive from 0, got {pid}"
            )
        poly, lw = _static_polyline(entry, PolylineKind.GLOBAL_PATH, f"candidate_paths[{i}]", max_spacing)
        if lw <= 0:
            raise ValidationError(f"candidate_paths[{i}]: lane_width must be positive")
        paths.append(CandidatePath(pid, poly, lw))
    if not paths:
        raise ValidationError("scenario needs at least one candidate path")

    slots = []
    for i, entry in enumerate(doc["spawn_slots"]):
        _require_keys(entry, ["x", "y", "theta", "path"], [], f"spawn_slots[{i}]")
        pid = entry["path"]
        if not isinstance(pid, int) or not (0 <= pid < len(paths)):
            raise ValidationError(f"spawn_slots[{i}]: unknown path id {pid!r}")
        slots.append(
            SpawnSlot(
                Pose2D(
                    _as_float(entry["x"], f"spawn_slots[{i}].x"),
                    _as_float(entry["y"], f"spawn_slots[{i}].y"),
                    _as_float(entry["theta"], f"spawn_slots[{i}].theta"),
                ),
                pid,
            )
        )
    if not slots:
        raise ValidationError("scenario needs at least one spawn slot")

    count = doc["default_agent_count"]
    if not isinstance(count, int) or count < 1:
        raise ValidationError("default_agent_count must be a positive integer")
    if count > len(slots):
        raise ValidationError(
            f"default_agent_count {count} exceeds the {len(slots)} spawn slots"
        )

    spec = ScenarioSpec(
        name=name,
        centerlines=centerlines,
        sidelines=sidelines,
        drivable_area=drivable,
        interaction_zone=zone,
        lane_directions=lane_directions,
        spawn_slots=slots,
        paths=paths,
        default_agent_count=count,
        vehicle=vehicle,
        max_vector_spacing=max_spacing,
        idm=idm_params,
    )
    _validate_geometry(spec)
    spec.build_runtime()
    return spec


def _validate_geometry(spec: ScenarioSpec):
    # Containment checks run on shapely at load time only; the runtime
    # engine uses its own vectorized point tests.
    from shapely.geometry import Point, Polygon
    from shapely.ops import unary_union

    polys = []
    for i, arr in enumerate(spec.drivable_area):
        p = Polygon(arr)
        if not p.is_valid:
            raise ValidationError(f"drivable_area[{i}] polygon is not simple/valid")
        polys.append(p)
    union = unary_union(polys)
    zone = Polygon(spec.interaction_zone)
    if not zone.is_valid:
        raise ValidationError("interaction_zone polygon is not simple/valid")
    if not union.buffer(1e-6).covers(zone):
        raise ValidationError("interaction_zone is not contained in the drivable area")
    for i, slot in enumerate(spec.spawn_slots):
        if not union.buffer(1e-6).covers(Point(slot.pose.x, slot.pose.y)):
            raise ValidationError(f"spawn_slots[{i}] lies outside the drivable area")

    for p in spec.paths:
        p.arrays = PathArrays(p.polyline.points())
    zone_arr = spec.interaction_zone
    for p in spec.paths:
        pts = p.polyline.points()
        inside = points_in_polygons(pts, [zone_arr])
        if not inside.any():
            raise ValidationError(f"candidate_paths[{p.path_id}] never enters the interaction zone")
        if inside[-1]:
            raise ValidationError(f"candidate_paths[{p.path_id}] ends inside the interaction zone")
        # Slots may sit at any depth along their path (staggered starts),
        # so the path origin itself carries no spawn constraint.
        _check_self_approach(p)

    for i, slot in enumerate(spec.spawn_slots):
        arrays = spec.paths[slot.path_id].arrays
        proj = arrays.project(slot.pose.x, slot.pose.y)
        if abs(proj.lateral_offset) > 1e-6:
            raise ValidationError(f"spawn_slots[{i}] is not on its path")


def _check_self_approach(p: CandidatePath):
    """Reject paths that fold back near themselves.

    Samples segment endpoints and midpoints; any two samples separated
    by at least SELF_APPROACH_ARCLEN of arclength must be at least
    SELF_APPROACH_DIST apart.  Windowed projection exactness and the
    grid broad phase both rely on this.
    """
    pa = p.arrays
    s_vals = np.concatenate([pa.cum0, pa.cum0 + 0.5 * pa.seg_len])
    xs = np.concatenate([pa.ax, pa.ax + 0.5 * pa.seg_len * pa.ux])
    ys = np.concatenate([pa.ay, pa.ay + 0.5 * pa.seg_len * pa.uy])
    order = np.argsort(s_vals, kind="stable")
    s_vals = s_vals[order]
    xs = xs[order]
    ys = ys[order]
    ds = np.abs(s_vals[:, None] - s_vals[None, :])
    d2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
    bad = (ds >= SELF_APPROACH_ARCLEN) & (d2 < SELF_APPROACH_DIST ** 2)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(
            f"candidate_paths[{p.path_id}] approaches itself: arclengths "
            f"{s_vals[i]:.1f} and {s_vals[j]:.1f} are {math.sqrt(d2[i, j]):.2f} m apart"
        )


def _assets_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "assets")


def bundled_scenarios() -> List[str]:
    """Names of the scenario documents shipped with the package."""
    return sorted(
        os.path.splitext(f)[0]
        for f in os.listdir(_assets_dir())
        if f.endswith(".yaml")
    )


_scenario_cache: Dict[Tuple[str, float], ScenarioSpec] = {}


def load_scenario(name_or_path: str) -> ScenarioSpec:
    """Load a scenario by bundled name or by document path.

    Results are cached per (path, mtime); mutating a returned spec is
    not supported.
    """
    if os.sep in name_or_path or name_or_path.endswith((".yaml", ".yml")):
        path = name_or_path
    else:
        path = os.path.join(_assets_dir(), name_or_path + ".yaml")
    if not os.path.exists(path):
        raise ParseError(f"no scenario document at {path}")
    key = (os.path.realpath(path), os.path.getmtime(path))
    cached = _scenario_cache.get(key)
    if cached is not None:
        return cached
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ParseError(f"{path}: {e}") from e
    spec = scenario_from_dict(doc, name_hint=path)
    _scenario_cache[key] = spec
    return spec


def generate_cases(
    scenario: ScenarioSpec,
    n_cases: int,
    master_seed: int,
    svo_mode: str = "uniform",
    agent_count: Optional[int] = None,
) -> List[CaseSpec]:
    """Generate reproducible cases for a scenario.

    Each case draws distinct spawn slots, jitters every agent up to
    +-SPAWN_JITTER meters along its path, and assigns genuine SVO angles
    (svo_mode "uniform" draws from [0, 90] degrees, "fixed:C" assigns C
    to everyone).  Initial footprints are rejection-sampled until no two
    overlap; PlacementError after MAX_PLACEMENT_ATTEMPTS tries.
    """
    count = scenario.default_agent_count if agent_count is None else agent_count
    if count < 1 or count > len(scenario.spawn_slots):
        raise ValidationError(
            f"agent count {count} must be in [1, {len(scenario.spawn_slots)}]"
        )
    fixed_svo = _parse_svo_mode(svo_mode)
    veh = scenario.vehicle
    cases = []
    for idx in range(n_cases):
        seed = derive_seed(master_seed, idx)
        rng = np.random.default_rng(seed)
        agents = None
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            slot_ids = rng.choice(len(scenario.spawn_slots), size=count, replace=False)
            jitter = rng.uniform(-SPAWN_JITTER, SPAWN_JITTER, size=count)
            if fixed_svo is None:
                svos = rng.uniform(0.0, 90.0, size=count)
            else:
                svos = np.full(count, fixed_svo)
            candidate = []
            for i in range(count):
                slot = scenario.spawn_slots[int(slot_ids[i])]
                arrays = scenario.paths[slot.path_id].arrays
                x, y, theta = arrays.point_at(slot.arclength + float(jitter[i]))
                candidate.append(
                    AgentInit(
                        agent_id=i + 1,
                        path_id=slot.path_id,
                        x=float(x),
                        y=float(y),
                        theta=float(theta),
                        speed=0.0,
                        svo_deg=float(svos[i]),
                    )
                )
            if not _any_overlap(candidate, veh):
                agents = candidate
                break
        if agents is None:
            raise PlacementError(
                f"case {idx}: no overlap-free placement in {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        cases.append(CaseSpec(scenario.name, idx, seed, tuple(agents)))
    return cases


def _parse_svo_mode(svo_mode: str) -> Optional[float]:
    if svo_mode == "uniform":
        return None
    if svo_mode.startswith("fixed:"):
        try:
            val = float(svo_mode.split(":", 1)[1])
        except ValueError as e:
            raise ValidationError(f"bad svo mode {svo_mode!r}") from e
        if not (0.0 <= val <= 90.0):
            raise ValidationError(f"fixed svo {val} outside [0, 90] degrees")
        return val
    raise ValidationError(f"svo mode must be 'uniform' or 'fixed:<deg>', got {svo_mode!r}")


def _any_overlap(agents: List[AgentInit], veh: VehicleParams) -> bool:
    boxes = [
        OrientedBox(Pose2D(a.x, a.y, a.theta), veh.length, veh.width) for a in agents
    ]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes_overlap(boxes[i], boxes[j]):
                return True
    return False


def save_cases(cases: Sequence[CaseSpec], path: str, master_seed: int, svo_mode: str):
    """Write a case list as a versioned YAML document."""
    if not cases:
        raise ValidationError("refusing to write an empty case list")
    doc = {
        "format_version": CASES_FORMAT_VERSION,
        "scenario": cases[0].scenario,
        "master_seed": int(master_seed),
        "svo_mode": svo_mode,
        "cases": [
            {
                "case_id": c.case_id,
                "seed": int(c.seed),
                "agents": [
                    {
                        "id": a.agent_id,
                        "path": a.path_id,
                        "x": a.x,
                        "y": a.y,
                        "theta": a.theta,
                        "speed": a.speed,
                        "svo": a.svo_deg,
                    }
                    for a in c.agents
                ],
            }
            for c in cases
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)


def load_cases(path: str) -> List[CaseSpec]:
    """Read a case list document; validates structure and value ranges."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ParseError(f"{path}: {e}") from e
    _require_keys(
        doc, ["format_version", "scenario", "cases"], ["master_seed", "svo_mode"], path
    )
    if doc["format_version"] != CASES_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported cases format_version {doc['format_version']!r}"
        )
    scenario_name = doc["scenario"]
    cases = []
    for ci, entry in enumerate(doc["cases"]):
        _require_keys(entry, ["case_id", "seed", "agents"], [], f"cases[{ci}]")
        agents = []
        seen_ids = set()
        for ai, a in enumerate(entry["agents"]):
            _require_keys(
                a, ["id", "path", "x", "y", "theta", "speed", "svo"], [], f"cases[{ci}].agents[{ai}]"
            )
            aid = a["id"]
            if not isinstance(aid, int) or aid < 1:
                raise ValidationError(f"cases[{ci}].agents[{ai}]: bad agent id {aid!r}")
            if aid in seen_ids:
                raise ValidationError(f"cases[{ci}]: duplicate agent id {aid}")
            seen_ids.add(aid)
            svo = _as_float(a["svo"], "svo")
            if not (-90.0 <= svo <= 90.0):
                raise ValidationError(
                    f"cases[{ci}].agents[{ai}]: svo {svo} outside [-90, 90] degrees"
                )
            speed = _as_float(a["speed"], "speed")
            if speed < 0.0:
                raise ValidationError(f"cases[{ci}].agents[{ai}]: negative speed")
            agents.append(
                AgentInit(
                    agent_id=aid,
                    path_id=int(a["path"]),
                    x=_as_float(a["x"], "x"),
                    y=_as_float(a["y"], "y"),
                    theta=_as_float(a["theta"], "theta"),
                    speed=speed,
                    svo_deg=svo,
                )
            )
        agents.sort(key=lambda ag: ag.agent_id)
        if [a.agent_id for a in agents] != list(range(1, len(agents) + 1)):
            raise ValidationError(f"cases[{ci}]: agent ids must be 1..n")
        cases.append(
            CaseSpec(scenario_name, int(entry["case_id"]), int(entry["seed"]), tuple(agents))
        )
    return cases
