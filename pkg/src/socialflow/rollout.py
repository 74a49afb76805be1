"""Episode execution, logging, batching, and replay.

One episode couples the engine with a flow policy, a context delivery
mode, and optionally an ego policy: each step delivers per-receiver
context, asks every policy for an action, advances the world, and
records what happened.  Batches key every episode by (case_id, repeat)
and derive its seed from the master seed and that key alone, so results
never depend on worker count or scheduling order.

Logs are newline-delimited JSON (one record per step plus a header and
a terminal record per episode); Python's float serialization is exact,
so a written log reads back bitwise identical and a replay can be
checked for bit equality.
"""

from __future__ import annotations

import gzip
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .communication import CommMode, communicate
from .dynamics import Action, PidParams
from .env import EnvMode, EpisodeConfig, WorldState, reset, step
from .observation import EGO_ID, attach_context, build_adversary_observation, build_observation
from .policy import PolicyHandle, act, scripted_action
from .reward import RewardWeights, SvoContext
from .scenario import AgentInit, CaseSpec, ScenarioSpec, load_scenario
from .seeding import derive_seed

LOG_FORMAT_VERSION = 1


@dataclass
class EpisodeLog:
    """Everything one episode produced.

    ``steps`` is None when step retention was disabled; the summary
    fields (statuses, termination steps, speed accumulators) are always
    present and suffice for metric aggregation.  ``wall_time`` is
    excluded from equality so identical runs compare equal.
    """

    format_version: int
    scenario: str
    case_id: int
    repeat: int
    seed: int
    v_max: float
    comm_kind: str
    case: dict
    episode_config: dict
    statuses: Dict[int, str]
    termination_steps: Dict[int, int]
    speed_sums: Dict[int, float]
    alive_steps: Dict[int, int]
    steps: Optional[List[dict]]
    wall_time: float = field(default=0.0, compare=False)


def _case_to_dict(case: CaseSpec) -> dict:
    return {
        "scenario": case.scenario,
        "case_id": case.case_id,
        "seed": case.seed,
        "agents": [
            {
                "agent_id": a.agent_id,
                "path_id": a.path_id,
                "x": a.x,
                "y": a.y,
                "theta": a.theta,
                "speed": a.speed,
                "svo_deg": a.svo_deg,
            }
            for a in case.agents
        ],
    }


def _config_to_dict(cfg: EpisodeConfig) -> dict:
    return {
        "dt": cfg.dt,
        "max_steps": cfg.max_steps,
        "clip_radius": cfg.clip_radius,
        "history_len": cfg.history_len,
        "off_route_threshold": cfg.off_route_threshold,
        "wrong_lane_heading_deg": cfg.wrong_lane_heading_deg,
        "wrong_lane_persistence": cfg.wrong_lane_persistence,
        "weights": {"omega1": cfg.weights.omega1, "omega2": cfg.weights.omega2},
        "pid": {"kp": cfg.pid.kp, "ki": cfg.pid.ki, "kd": cfg.pid.kd,
                "accel_bound": cfg.pid.accel_bound},
    }


def config_from_dict(doc: dict) -> EpisodeConfig:
    doc = dict(doc)
    weights = RewardWeights(**doc.pop("weights"))
    pid = PidParams(**doc.pop("pid"))
    return EpisodeConfig(weights=weights, pid=pid, **doc)


def case_from_dict(doc: dict) -> CaseSpec:
    agents = tuple(
        AgentInit(
            agent_id=int(a["agent_id"]),
            path_id=int(a["path_id"]),
            x=float(a["x"]),
            y=float(a["y"]),
            theta=float(a["theta"]),
            speed=float(a["speed"]),
            svo_deg=float(a["svo_deg"]),
        )
        for a in doc["agents"]
    )
    return CaseSpec(doc["scenario"], int(doc["case_id"]), int(doc["seed"]), agents)


def _deliver(mode: CommMode, receiver: int, genuine: SvoContext, world) -> object:
    """Delivery for one receiver, wiring the adversary's view if needed."""
    if mode.kind != "adversarial":
        return communicate(mode, receiver, genuine)
    ego = world.agents.get(EGO_ID)
    clip = world.episode_config.clip_radius
    if ego is None or not ego.is_alive() or receiver == EGO_ID:
        return communicate(mode, receiver, genuine, ego_distance=math.inf, clip_radius=clip)
    me = world.agents[receiver]
    dist = math.hypot(ego.x - me.x, ego.y - me.y)
    adv_obs = build_adversary_observation(receiver, world) if dist <= clip else None
    return communicate(mode, receiver, genuine, adv_obs=adv_obs,
                       ego_distance=dist, clip_radius=clip)


def _choose_action(policy: PolicyHandle, mode: CommMode, agent_id: int,
                   genuine: SvoContext, world, want_context: bool):
    """Action plus the delivered context (None when not materialized).

    Scripted and constant policies ignore context, so delivery is only
    materialized for them when the log wants it.
    """
    if policy.kind == "idm_scripted":
        delivered = _deliver(mode, agent_id, genuine, world) if want_context else None
        return scripted_action(world, agent_id), delivered
    if policy.kind == "constant_action":
        delivered = _deliver(mode, agent_id, genuine, world) if want_context else None
        return policy.action, delivered
    if policy.kind == "neural_lower":
        obs = build_observation(agent_id, world)
        delivered = _deliver(mode, agent_id, genuine, world)
        return act(policy, attach_context(obs, delivered)), delivered
    raise ValueError(f"policy kind {policy.kind!r} cannot drive an agent")


def run_episode(
    case: CaseSpec,
    flow_policy: PolicyHandle,
    comm_mode: CommMode,
    ego_policy: Optional[PolicyHandle] = None,
    seed: int = 0,
    *,
    scenario: Optional[ScenarioSpec] = None,
    config: Optional[EpisodeConfig] = None,
    ego_comm_mode: Optional[CommMode] = None,
    keep_steps: bool = True,
    repeat: int = 0,
    actions_override: Optional[List[Dict[int, Action]]] = None,
) -> EpisodeLog:
    """One full episode; deterministic in all arguments.

    The ego agent (id 1) exists iff ``ego_policy`` is given; it receives
    context from ``ego_comm_mode`` (a fixed constant by default) while
    flow agents receive from ``comm_mode``.  ``actions_override`` drives
    a replay: recorded joint actions are fed back verbatim and policies
    are ignored.
    """
    t0 = time.perf_counter()
    if scenario is None:
        scenario = load_scenario(case.scenario)
    mode = EnvMode.EGO_VS_FLOW if ego_policy is not None else EnvMode.FLOW
    if ego_policy is not None and ego_policy.kind == "neural_adversary":
        raise ValueError("an adversary bundle cannot drive the ego agent")
    if flow_policy.kind == "neural_adversary":
        raise ValueError("an adversary bundle cannot drive flow agents")
    if comm_mode.kind == "adversarial" and mode is not EnvMode.EGO_VS_FLOW:
        raise ValueError("adversarial communication requires an ego policy")
    if ego_comm_mode is None:
        ego_comm_mode = CommMode.constant(0.0)

    world = reset(scenario, case, mode=mode, config=config)
    world.rng_state = derive_seed(seed, case.case_id)
    genuine = SvoContext({a.agent_id: a.genuine_svo for a in world.alive_agents()})

    v_max = scenario.vehicle.v_max
    speed_sums = {aid: 0.0 for aid in world.roster_ids}
    alive_steps = {aid: 0 for aid in world.roster_ids}
    steps: Optional[List[dict]] = [] if keep_steps else None
    statuses: Dict[int, str] = {}
    termination_steps: Dict[int, int] = {}

    k = 0
    while not world.episode_done:
        if actions_override is not None:
            acts = actions_override[k]
            delivered_by = {}
        else:
            acts = {}
            delivered_by = {}
            for a in world.alive_agents():
                if a.is_ego:
                    policy, mode_i = ego_policy, ego_comm_mode
                else:
                    policy, mode_i = flow_policy, comm_mode
                action, delivered = _choose_action(
                    policy, mode_i, a.agent_id, genuine, world, keep_steps
                )
                acts[a.agent_id] = action
                if delivered is not None:
                    delivered_by[a.agent_id] = delivered
        _, outcome = step(world, acts)
        k = outcome.step
        record_agents = {}
        for aid, res in outcome.per_agent.items():
            agent = world.agents[aid]
            if agent.is_alive():
                speed_sums[aid] += agent.speed
                alive_steps[aid] += 1
            else:
                statuses[aid] = res.new_status.name
                termination_steps[aid] = k
            if steps is not None:
                bd = res.breakdown
                a_in = acts[aid]
                v_ref = a_in.v_ref if hasattr(a_in, "v_ref") else float(a_in[0])
                sigma = a_in.sigma if hasattr(a_in, "v_ref") else float(a_in[1])
                dlv = delivered_by.get(aid)
                record_agents[aid] = {
                    "pose": [agent.x, agent.y, agent.theta],
                    "speed": agent.speed,
                    "action": [v_ref, sigma],
                    "svo": dict(dlv.entries) if dlv is not None else None,
                    "reward": [bd.r_speed, bd.r_fail, bd.individual,
                               bd.composed, bd.adversary_signal],
                }
        if steps is not None:
            steps.append({"step": k, "agents": record_agents})

    return EpisodeLog(
        format_version=LOG_FORMAT_VERSION,
        scenario=case.scenario,
        case_id=case.case_id,
        repeat=repeat,
        seed=seed,
        v_max=v_max,
        comm_kind=comm_mode.kind,
        case=_case_to_dict(case),
        episode_config=_config_to_dict(world.episode_config),
        statuses=statuses,
        termination_steps=termination_steps,
        speed_sums=speed_sums,
        alive_steps=alive_steps,
        steps=steps,
        wall_time=time.perf_counter() - t0,
    )


def replay_episode(
    log: EpisodeLog,
    scenario: Optional[ScenarioSpec] = None,
    config: Optional[EpisodeConfig] = None,
) -> EpisodeLog:
    """Re-run an episode from its logged actions alone.

    The result carries no delivered context (actions are replayed, not
    recomputed); poses, speeds, rewards, and terminal statuses must
    reproduce the original bitwise on a healthy engine.
    """
    if log.steps is None:
        raise ValueError("log kept no step records; replay needs actions")
    if config is None:
        config = config_from_dict(log.episode_config)
    case = case_from_dict(log.case)
    actions = [
        {int(aid): Action(rec["action"][0], rec["action"][1])
         for aid, rec in s["agents"].items()}
        for s in log.steps
    ]
    # Ego mode changes reward composition (adversary signal), so replay
    # must restore it; the signal's presence in the record marks it.
    was_ego_mode = log.comm_kind == "adversarial" or _log_had_ego(log)
    ego_policy = (
        PolicyHandle.constant_action(Action(0.0, 0.0)) if was_ego_mode else None
    )
    rep = run_episode(
        case,
        PolicyHandle.idm_scripted(),
        CommMode.fully_visible_genuine(),
        ego_policy,
        log.seed,
        scenario=scenario,
        config=config,
        keep_steps=True,
        repeat=log.repeat,
        actions_override=actions,
    )
    rep.comm_kind = log.comm_kind
    return rep


def _log_had_ego(log: EpisodeLog) -> bool:
    for s in log.steps or ():
        for rec in s["agents"].values():
            return rec["reward"][4] is not None
    return False


def verify_replay(
    log: EpisodeLog,
    scenario: Optional[ScenarioSpec] = None,
    config: Optional[EpisodeConfig] = None,
) -> List[str]:
    """Replay a log and report every bitwise divergence.

    Compares per-step poses, speeds, and reward breakdowns plus the
    terminal summary; delivered context is skipped because a replay
    feeds recorded actions instead of consulting policies.  An empty
    list means the log reproduces exactly.
    """
    rep = replay_episode(log, scenario=scenario, config=config)
    problems: List[str] = []
    if rep.statuses != log.statuses:
        problems.append(f"statuses differ: {log.statuses} vs {rep.statuses}")
    if rep.termination_steps != log.termination_steps:
        problems.append("termination steps differ")
    if rep.speed_sums != log.speed_sums or rep.alive_steps != log.alive_steps:
        problems.append("speed accumulators differ")
    if len(rep.steps) != len(log.steps):
        problems.append(f"step count {len(log.steps)} vs {len(rep.steps)}")
    for orig, got in zip(log.steps, rep.steps):
        for aid, rec in orig["agents"].items():
            other = got["agents"].get(aid)
            if other is None:
                problems.append(f"step {orig['step']}: agent {aid} missing")
                continue
            for fld in ("pose", "speed", "action", "reward"):
                if rec[fld] != other[fld]:
                    problems.append(
                        f"step {orig['step']} agent {aid} {fld}: "
                        f"{rec[fld]} vs {other[fld]}"
                    )
        if len(problems) > 20:
            problems.append("... further differences suppressed")
            break
    return problems


_WORKER: dict = {}


def _init_worker(payload: dict):
    _WORKER.update(payload)


def _run_task(task):
    case_idx, repeat = task
    p = _WORKER
    case = p["cases"][case_idx]
    return run_episode(
        case,
        p["flow_policy"],
        p["comm_mode"],
        p["ego_policy"],
        derive_seed(p["master_seed"], case.case_id, repeat),
        scenario=p["scenario"],
        config=p["config"],
        ego_comm_mode=p["ego_comm_mode"],
        keep_steps=p["keep_steps"],
        repeat=repeat,
    )


def run_batch(
    cases: Sequence[CaseSpec],
    repeats: int,
    master_seed: int,
    flow_policy: PolicyHandle,
    comm_mode: CommMode,
    ego_policy: Optional[PolicyHandle] = None,
    *,
    scenario: Optional[ScenarioSpec] = None,
    config: Optional[EpisodeConfig] = None,
    ego_comm_mode: Optional[CommMode] = None,
    workers: int = 1,
    keep_steps: bool = False,
) -> List[EpisodeLog]:
    """len(cases) x repeats episodes, sorted by (case_id, repeat).

    Every episode's seed is derive_seed(master_seed, case_id, repeat),
    so the result set is a pure function of the inputs regardless of
    ``workers``.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    if not cases:
        raise ValueError("no cases to run")
    if scenario is None:
        scenario = load_scenario(cases[0].scenario)
    payload = {
        "cases": list(cases),
        "flow_policy": flow_policy,
        "comm_mode": comm_mode,
        "ego_policy": ego_policy,
        "ego_comm_mode": ego_comm_mode,
        "scenario": scenario,
        "config": config,
        "master_seed": master_seed,
        "keep_steps": keep_steps,
    }
    tasks = [(ci, r) for ci in range(len(cases)) for r in range(repeats)]
    if workers <= 1:
        _init_worker(payload)
        try:
            logs = [_run_task(t) for t in tasks]
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(payload,)
        ) as pool:
            chunk = max(1, len(tasks) // (workers * 8))
            logs = list(pool.map(_run_task, tasks, chunksize=chunk))
    logs.sort(key=lambda lg: (lg.case_id, lg.repeat))
    return logs


def _log_to_records(log: EpisodeLog):
    head = {
        "kind": "header",
        "format_version": log.format_version,
        "scenario": log.scenario,
        "case_id": log.case_id,
        "repeat": log.repeat,
        "seed": log.seed,
        "v_max": log.v_max,
        "comm_kind": log.comm_kind,
        "has_steps": log.steps is not None,
        "case": log.case,
        "episode_config": log.episode_config,
    }
    yield head
    for s in log.steps or ():
        yield {
            "kind": "step",
            "step": s["step"],
            "agents": {
                str(aid): {
                    "pose": rec["pose"],
                    "speed": rec["speed"],
                    "action": rec["action"],
                    "svo": None if rec["svo"] is None
                    else {str(i): v for i, v in rec["svo"].items()},
                    "reward": rec["reward"],
                }
                for aid, rec in s["agents"].items()
            },
        }
    yield {
        "kind": "terminal",
        "statuses": {str(a): s for a, s in log.statuses.items()},
        "termination_steps": {str(a): t for a, t in log.termination_steps.items()},
        "speed_sums": {str(a): v for a, v in log.speed_sums.items()},
        "alive_steps": {str(a): n for a, n in log.alive_steps.items()},
        "wall_time": log.wall_time,
    }


def write_logs(logs: Sequence[EpisodeLog], path: str):
    """NDJSON stream of episodes; gzip when the path ends in .gz."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8") as fh:
        for log in logs:
            for rec in _log_to_records(log):
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_log(log: EpisodeLog, path: str):
    write_logs([log], path)


def read_logs(path: str) -> List[EpisodeLog]:
    opener = gzip.open if str(path).endswith(".gz") else open
    logs: List[EpisodeLog] = []
    head = None
    steps: Optional[List[dict]] = None
    with opener(path, "rt", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "header":
                head = rec
                steps = [] if rec["has_steps"] else None
            elif kind == "step":
                if steps is None:
                    raise ValueError("step record without step-keeping header")
                steps.append({
                    "step": rec["step"],
                    "agents": {
                        int(aid): {
                            "pose": r["pose"],
                            "speed": r["speed"],
                            "action": r["action"],
                            "svo": None if r["svo"] is None
                            else {int(i): v for i, v in r["svo"].items()},
                            "reward": r["reward"],
                        }
                        for aid, r in rec["agents"].items()
                    },
                })
            elif kind == "terminal":
                if head is None:
                    raise ValueError("terminal record before header")
                logs.append(EpisodeLog(
                    format_version=head["format_version"],
                    scenario=head["scenario"],
                    case_id=head["case_id"],
                    repeat=head["repeat"],
                    seed=head["seed"],
                    v_max=head["v_max"],
                    comm_kind=head["comm_kind"],
                    case=head["case"],
                    episode_config=head["episode_config"],
                    statuses={int(a): s for a, s in rec["statuses"].items()},
                    termination_steps={int(a): t
                                       for a, t in rec["termination_steps"].items()},
                    speed_sums={int(a): v for a, v in rec["speed_sums"].items()},
                    alive_steps={int(a): n for a, n in rec["alive_steps"].items()},
                    steps=steps,
                    wall_time=rec["wall_time"],
                ))
                head, steps = None, None
            else:
                raise ValueError(f"unknown log record kind {kind!r}")
    if head is not None:
        raise ValueError("truncated log: header without terminal record")
    return logs


def read_log(path: str) -> EpisodeLog:
    logs = read_logs(path)
    if len(logs) != 1:
        raise ValueError(f"expected one episode in {path}, found {len(logs)}")
    return logs[0]
