"""Batch aggregation of episode outcomes.

Per-agent terminal statuses become percentage rates over either the
whole flow or the ego agent alone; efficiency normalizes mean speed by
the scenario's top speed.  Confidence intervals use the normal
approximation over per-episode means, with the documented convention
that a single episode yields zero-width intervals.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .observation import EGO_ID
from .rollout import EpisodeLog


class EmptyBatch(ValueError):
    """Metrics need at least one episode."""


STATUS_KEYS = ("success", "collision", "off_road", "off_route", "wrong_lane", "timeout")
_STATUS_BY_NAME = {
    "SUCCESS": "success",
    "COLLISION": "collision",
    "OFF_ROAD": "off_road",
    "OFF_ROUTE": "off_route",
    "WRONG_LANE": "wrong_lane",
    "TIMEOUT": "timeout",
}


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate rates in percent plus their 95% intervals."""

    success_pct: float
    collision_pct: float
    off_road_pct: float
    off_route_pct: float
    wrong_lane_pct: float
    timeout_pct: float
    safety_pct: float
    efficiency_pct: float
    mean_speed: float
    episode_count: int
    agent_count: int
    ci95: Dict[str, float]


def _ci95(values: Sequence[float]) -> float:
    # Single episode: zero width by convention.
    n = len(values)
    if n < 2:
        return 0.0
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return 1.96 * math.sqrt(var / n)


def _scope_ids(log: EpisodeLog, scope: str) -> List[int]:
    if scope == "flow":
        return list(log.statuses)
    if scope == "ego_only":
        if EGO_ID not in log.statuses:
            raise EmptyBatch(f"episode {log.case_id} has no ego agent")
        return [EGO_ID]
    raise ValueError(f"scope must be 'flow' or 'ego_only', got {scope!r}")


def aggregate_metrics(
    logs: Iterable[EpisodeLog],
    scope: str = "flow",
    efficiency: str = "normalized_speed",
) -> MetricsReport:
    """Status rates and efficiency over a batch of episodes.

    Rates average per-agent terminal statuses over all in-scope agents
    of all episodes; speed averages over the alive steps of the same
    agents.  ``efficiency`` selects normalized_speed (percent of the
    scenario top speed) or raw_speed (plain m/s in the efficiency
    field).  Order of ``logs`` never matters.
    """
    logs = list(logs)
    if not logs:
        raise EmptyBatch("no episodes to aggregate")
    if efficiency not in ("normalized_speed", "raw_speed"):
        raise ValueError(f"unknown efficiency mode {efficiency!r}")

    counts = {k: 0 for k in STATUS_KEYS}
    total_agents = 0
    speed_sum = 0.0
    norm_speed_sum = 0.0
    steps_sum = 0
    per_episode: Dict[str, List[float]] = {k: [] for k in STATUS_KEYS}
    per_episode["efficiency"] = []

    for log in logs:
        ids = _scope_ids(log, scope)
        ep_counts = {k: 0 for k in STATUS_KEYS}
        for aid in ids:
            key = _STATUS_BY_NAME[log.statuses[aid]]
            ep_counts[key] += 1
            counts[key] += 1
        total_agents += len(ids)
        ep_speed = sum(log.speed_sums[aid] for aid in ids)
        ep_steps = sum(log.alive_steps[aid] for aid in ids)
        speed_sum += ep_speed
        norm_speed_sum += ep_speed / log.v_max
        steps_sum += ep_steps
        for k in STATUS_KEYS:
            per_episode[k].append(100.0 * ep_counts[k] / len(ids))
        if ep_steps:
            ep_mean = ep_speed / ep_steps
            per_episode["efficiency"].append(
                100.0 * ep_mean / log.v_max
                if efficiency == "normalized_speed" else ep_mean
            )
        else:
            per_episode["efficiency"].append(0.0)

    pct = {k: 100.0 * counts[k] / total_agents for k in STATUS_KEYS}
    mean_speed = speed_sum / steps_sum if steps_sum else 0.0
    if efficiency == "normalized_speed":
        eff = 100.0 * norm_speed_sum / steps_sum if steps_sum else 0.0
    else:
        eff = mean_speed
    return MetricsReport(
        success_pct=pct["success"],
        collision_pct=pct["collision"],
        off_road_pct=pct["off_road"],
        off_route_pct=pct["off_route"],
        wrong_lane_pct=pct["wrong_lane"],
        timeout_pct=pct["timeout"],
        safety_pct=100.0 - (pct["collision"] + pct["off_road"]
                            + pct["off_route"] + pct["wrong_lane"]),
        efficiency_pct=eff,
        mean_speed=mean_speed,
        episode_count=len(logs),
        agent_count=total_agents,
        ci95={k: _ci95(v) for k, v in per_episode.items()},
    )


def paired_difference(
    logs_a: Sequence[EpisodeLog],
    logs_b: Sequence[EpisodeLog],
    scope: str = "flow",
    efficiency: str = "normalized_speed",
) -> Dict[str, Tuple[float, float]]:
    """Mean per-episode metric differences (a minus b) with approximate
    95% intervals, pairing episodes by (case_id, repeat).

    Normal approximation, labeled approximate: this is a screening
    comparison, not a significance test.
    """
    index_b = {(lg.case_id, lg.repeat): lg for lg in logs_b}
    diffs: Dict[str, List[float]] = {k: [] for k in (*STATUS_KEYS, "efficiency")}
    paired = 0
    for a in logs_a:
        b = index_b.get((a.case_id, a.repeat))
        if b is None:
            continue
        paired += 1
        ra = aggregate_metrics([a], scope, efficiency)
        rb = aggregate_metrics([b], scope, efficiency)
        for k in diffs:
            field = "efficiency_pct" if k == "efficiency" else f"{k}_pct"
            diffs[k].append(getattr(ra, field) - getattr(rb, field))
    if not paired:
        raise EmptyBatch("no (case_id, repeat) pairs in common")
    return {
        k: (sum(v) / len(v), _ci95(v)) for k, v in diffs.items()
    }


TABLE_COLUMNS: Tuple[Tuple[str, str, str], ...] = (
    ("Success", "success_pct", "success"),
    ("Collision", "collision_pct", "collision"),
    ("Off Road", "off_road_pct", "off_road"),
    ("Off Route", "off_route_pct", "off_route"),
    ("Wrong Lane", "wrong_lane_pct", "wrong_lane"),
    ("Efficiency", "efficiency_pct", "efficiency"),
)


def format_table(rows: Sequence[Tuple[str, MetricsReport]], label: str = "") -> str:
    """Human-readable table, one line per labeled report."""
    header = [label or "Run"] + [c[0] for c in TABLE_COLUMNS]
    body = []
    for name, rep in rows:
        cells = [name]
        for _, field, ci_key in TABLE_COLUMNS:
            cells.append(f"{getattr(rep, field):.1f} ± {rep.ci95[ci_key]:.1f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def write_metrics_csv(rows: Sequence[Tuple[str, MetricsReport]], path: str):
    """Machine-readable mirror of the table plus counts and raw speed."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["run"]
        for _, field, _ in TABLE_COLUMNS:
            head += [field, field.replace("_pct", "_ci95")]
        head += ["timeout_pct", "safety_pct", "mean_speed", "episodes", "agents"]
        w.writerow(head)
        for name, rep in rows:
            row = [name]
            for _, field, ci_key in TABLE_COLUMNS:
                row += [repr(getattr(rep, field)), repr(rep.ci95[ci_key])]
            row += [repr(rep.timeout_pct), repr(rep.safety_pct),
                    repr(rep.mean_speed), rep.episode_count, rep.agent_count]
            w.writerow(row)
