"""Command-line surface: case generation, rollouts, evaluation, replay.

Runs are driven by a YAML config plus flag overrides; every run writes
its outputs under one directory together with a manifest (config hash,
seeds, engine version) sufficient to reproduce it exactly.  Exit codes:
0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import Dict, List, Optional, Tuple

import yaml

from . import __version__
from .communication import CommMode
from .env import EpisodeConfig
from .metrics import aggregate_metrics, format_table, write_metrics_csv
from .policy import AdversarySource, PolicyHandle
from .reward import RewardWeights
from .rollout import read_logs, run_batch, verify_replay, write_logs
from .scenario import generate_cases, load_cases, load_scenario, save_cases
from .weights import load_weights

OUTPUT_DIR_ENV = "SOCIALFLOW_OUTPUT_DIR"


class ConfigError(ValueError):
    """Bad configuration; message names the offending field."""


def _require_mapping(doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(doc).__name__}")
    return doc


def _check_keys(doc: dict, allowed: Dict[str, type], where: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(
                f"{where}: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})"
            )


_TOP_KEYS = {
    "scenario": str,
    "cases": str,
    "comm_mode": str,
    "flow": str,
    "ego": (str, type(None)),
    "seeds": dict,
    "episode": dict,
    "reward": dict,
    "metrics": dict,
    "workers": int,
    "output_dir": str,
    "save_logs": bool,
}

_EPISODE_KEYS = (
    "dt", "max_steps", "clip_radius", "history_len", "off_route_threshold",
    "wrong_lane_heading_deg", "wrong_lane_persistence",
)


class RunConfig:
    """Fully resolved run description built from YAML plus overrides."""

    def __init__(self, doc: dict, path: str):
        doc = _require_mapping(doc, path)
        _check_keys(doc, _TOP_KEYS, path)
        for key, types in _TOP_KEYS.items():
            if key in doc and not isinstance(doc[key], types):
                raise ConfigError(f"{path}: key {key!r} has the wrong type")
        for req in ("scenario", "cases", "flow"):
            if req not in doc:
                raise ConfigError(f"{path}: missing required key {req!r}")
        self.scenario_spec: str = doc["scenario"]
        self.cases_path: str = doc["cases"]
        self.comm_spec: str = doc.get("comm_mode", "fully_visible_genuine")
        self.flow_spec: str = doc["flow"]
        self.ego_spec: Optional[str] = doc.get("ego")

        seeds = _require_mapping(doc.get("seeds", {}), f"{path}: seeds")
        _check_keys(seeds, {"master": int, "repeats": int}, f"{path}: seeds")
        self.master_seed = int(seeds.get("master", 0))
        self.repeats = int(seeds.get("repeats", 1))
        if self.repeats < 1:
            raise ConfigError(f"{path}: seeds.repeats must be at least 1")

        episode = _require_mapping(doc.get("episode", {}), f"{path}: episode")
        _check_keys(episode, {k: object for k in _EPISODE_KEYS}, f"{path}: episode")
        reward = _require_mapping(doc.get("reward", {}), f"{path}: reward")
        _check_keys(reward, {"omega1": object, "omega2": object}, f"{path}: reward")
        try:
            weights = RewardWeights(**{k: float(v) for k, v in reward.items()})
            self.episode_config = EpisodeConfig(**episode, weights=weights)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: episode/reward: {e}") from e

        metrics = _require_mapping(doc.get("metrics", {}), f"{path}: metrics")
        _check_keys(metrics, {"efficiency": str}, f"{path}: metrics")
        self.efficiency = metrics.get("efficiency", "normalized_speed")
        if self.efficiency not in ("normalized_speed", "raw_speed"):
            raise ConfigError(
                f"{path}: metrics.efficiency must be normalized_speed or raw_speed"
            )

        self.workers = int(doc.get("workers", 1))
        if self.workers < 1:
            raise ConfigError(f"{path}: workers must be at least 1")
        self.output_dir: Optional[str] = doc.get("output_dir")
        self.save_logs = bool(doc.get("save_logs", False))
        self.raw = doc

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path}: {e}") from e
        return cls(doc, path)


def parse_policy_spec(spec: str, field: str) -> PolicyHandle:
    """``idm`` or ``neural:<weights path>``."""
    if spec == "idm":
        return PolicyHandle.idm_scripted()
    if spec.startswith("neural:"):
        path = spec.split(":", 1)[1]
        try:
            return PolicyHandle.neural_lower(load_weights(path))
        except FileNotFoundError as e:
            raise ConfigError(f"{field}: weights file not found: {path}") from e
        except ValueError as e:
            raise ConfigError(f"{field}: {e}") from e
    raise ConfigError(f"{field}: policy spec must be 'idm' or 'neural:<path>', got {spec!r}")


def parse_comm_spec(spec: str, field: str) -> CommMode:
    """constant[:deg] | self_visible | fully_visible_genuine | adversarial:<weights>."""
    try:
        if spec == "constant":
            return CommMode.constant()
        if spec.startswith("constant:"):
            return CommMode.constant(float(spec.split(":", 1)[1]))
        if spec == "self_visible":
            return CommMode.self_visible()
        if spec == "fully_visible_genuine":
            return CommMode.fully_visible_genuine()
        if spec.startswith("adversarial:"):
            path = spec.split(":", 1)[1]
            handle = PolicyHandle.neural_adversary(load_weights(path))
            return CommMode.adversarial(AdversarySource(handle))
    except FileNotFoundError as e:
        raise ConfigError(f"{field}: weights file not found: {e.filename}") from e
    except ValueError as e:
        raise ConfigError(f"{field}: {e}") from e
    raise ConfigError(
        f"{field}: comm mode must be constant[:deg], self_visible, "
        f"fully_visible_genuine, or adversarial:<path>, got {spec!r}"
    )


def _resolve_output_dir(flag: Optional[str], cfg_dir: Optional[str], sub: str) -> str:
    out = flag or cfg_dir or os.environ.get(OUTPUT_DIR_ENV) or os.path.join(
        os.getcwd(), "socialflow_runs", sub
    )
    os.makedirs(out, exist_ok=True)
    return out


def _config_hash(doc) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _write_manifest(out_dir: str, payload: dict):
    payload = dict(payload, engine_version=__version__)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors: exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="socialflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-cases", help="generate a reproducible case file")
    g.add_argument("--scenario", required=True, help="bundled name or YAML path")
    g.add_argument("--n", type=int, required=True, help="number of cases")
    g.add_argument("--seed", type=int, required=True, help="master seed")
    g.add_argument("--svo", default="uniform", help="uniform or fixed:<deg>")
    g.add_argument("--agents", type=int, default=None, help="agents per case")
    g.add_argument("--out", default=None, help="case file path")
    g.add_argument("--output-dir", default=None)

    r = sub.add_parser("rollout", help="run the flow and print its metrics")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--output-dir", default=None)
    r.add_argument("--save-logs", action="store_true", default=None)

    e = sub.add_parser("evaluate", help="evaluate an ego policy against flows")
    e.add_argument("--config", required=True)
    e.add_argument("--ego-weights", required=True)
    e.add_argument("--flows", required=True,
                   help="comma-separated flow specs, e.g. idm,neural:w.svow")
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--output-dir", default=None)
    e.add_argument("--save-logs", action="store_true", default=None)

    y = sub.add_parser("replay", help="re-run a log and verify it bitwise")
    y.add_argument("--log", required=True)
    y.add_argument("--dump-step", type=int, default=None)
    y.add_argument("--scenario", default=None, help="override scenario resolution")
    return p


def _load_run_inputs(cfg: RunConfig):
    try:
        scenario = load_scenario(cfg.scenario_spec)
    except Exception as e:
        raise ConfigError(f"scenario: {e}") from e
    try:
        cases = load_cases(cfg.cases_path)
    except OSError as e:
        raise ConfigError(f"cases: {e}") from e
    except ValueError as e:
        raise ConfigError(f"cases: {e}") from e
    if cases and cases[0].scenario != scenario.name:
        raise ConfigError(
            f"cases: file is for scenario {cases[0].scenario!r}, "
            f"config loads {scenario.name!r}"
        )
    return scenario, cases


def _cmd_gen_cases(args) -> int:
    out_dir = _resolve_output_dir(args.output_dir, None, "gen-cases")
    try:
        scenario = load_scenario(args.scenario)
        cases = generate_cases(scenario, args.n, args.seed, svo_mode=args.svo,
                               agent_count=args.agents)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    path = args.out or os.path.join(out_dir, f"{scenario.name}_cases.yaml")
    save_cases(cases, path, args.seed, args.svo)
    _write_manifest(out_dir, {
        "command": "gen-cases",
        "scenario": args.scenario,
        "n": args.n,
        "master_seed": args.seed,
        "svo_mode": args.svo,
        "agents": args.agents,
        "cases_file": os.path.abspath(path),
        "config_sha256": _config_hash({
            "scenario": args.scenario, "n": args.n, "seed": args.seed,
            "svo": args.svo, "agents": args.agents,
        }),
    })
    print(f"wrote {len(cases)} cases to {path}")
    return 0


def _cmd_rollout(args) -> int:
    cfg = RunConfig.load(args.config)
    workers = args.workers if args.workers is not None else cfg.workers
    save_logs = cfg.save_logs if args.save_logs is None else args.save_logs
    out_dir = _resolve_output_dir(args.output_dir, cfg.output_dir, "rollout")
    scenario, cases = _load_run_inputs(cfg)
    flow = parse_policy_spec(cfg.flow_spec, "flow")
    comm = parse_comm_spec(cfg.comm_spec, "comm_mode")
    ego = None
    if cfg.ego_spec is not None:
        ego = parse_policy_spec(cfg.ego_spec, "ego")
    if comm.kind == "adversarial" and ego is None:
        raise ConfigError("comm_mode: adversarial communication requires an ego policy")

    logs = run_batch(
        cases, cfg.repeats, cfg.master_seed, flow, comm, ego,
        scenario=scenario, config=cfg.episode_config,
        workers=workers, keep_steps=save_logs,
    )
    report = aggregate_metrics(logs, scope="flow", efficiency=cfg.efficiency)
    rows = [(scenario.name, report)]
    if ego is not None:
        rows.append((f"{scenario.name} (ego)",
                     aggregate_metrics(logs, "ego_only", cfg.efficiency)))
    table = format_table(rows, label="Flow")
    print(table)
    write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    if save_logs:
        write_logs(logs, os.path.join(out_dir, "logs.ndjson.gz"))
    _write_manifest(out_dir, {
        "command": "rollout",
        "config_file": os.path.abspath(args.config),
        "config_sha256": _config_hash(cfg.raw),
        "master_seed": cfg.master_seed,
        "repeats": cfg.repeats,
        "episodes": len(logs),
        "workers": workers,
        "scenario": scenario.name,
        "cases_file": os.path.abspath(cfg.cases_path),
    })
    return 0


def _cmd_evaluate(args) -> int:
    cfg = RunConfig.load(args.config)
    workers = args.workers if args.workers is not None else cfg.workers
    save_logs = cfg.save_logs if args.save_logs is None else args.save_logs
    out_dir = _resolve_output_dir(args.output_dir, cfg.output_dir, "evaluate")
    scenario, cases = _load_run_inputs(cfg)
    ego = parse_policy_spec(f"neural:{args.ego_weights}", "ego-weights")
    comm = parse_comm_spec(cfg.comm_spec, "comm_mode")
    flow_specs = [s.strip() for s in args.flows.split(",") if s.strip()]
    if not flow_specs:
        raise ConfigError("flows: at least one flow spec required")

    rows: List[Tuple[str, object]] = []
    for spec in flow_specs:
        flow = parse_policy_spec(spec, "flows")
        logs = run_batch(
            cases, cfg.repeats, cfg.master_seed, flow, comm, ego,
            scenario=scenario, config=cfg.episode_config,
            workers=workers, keep_steps=save_logs,
        )
        rows.append((spec, aggregate_metrics(logs, "ego_only", cfg.efficiency)))
        if save_logs:
            name = spec.replace(":", "_").replace("/", "_")
            write_logs(logs, os.path.join(out_dir, f"logs_{name}.ndjson.gz"))
    table = format_table(rows, label="Ego vs flow")
    print(table)
    write_metrics_csv(rows, os.path.join(out_dir, "evaluate.csv"))
    with open(os.path.join(out_dir, "evaluate.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    _write_manifest(out_dir, {
        "command": "evaluate",
        "config_file": os.path.abspath(args.config),
        "config_sha256": _config_hash(cfg.raw),
        "ego_weights": os.path.abspath(args.ego_weights),
        "flows": flow_specs,
        "master_seed": cfg.master_seed,
        "repeats": cfg.repeats,
        "workers": workers,
        "scenario": scenario.name,
        "cases_file": os.path.abspath(cfg.cases_path),
    })
    return 0


def _cmd_replay(args) -> int:
    try:
        logs = read_logs(args.log)
    except OSError as e:
        raise ConfigError(f"log: {e}") from e
    scenario = load_scenario(args.scenario) if args.scenario else None
    failures = 0
    for log in logs:
        problems = verify_replay(log, scenario=scenario)
        tag = f"case {log.case_id} repeat {log.repeat}"
        if problems:
            failures += 1
            print(f"{tag}: MISMATCH")
            for p in problems:
                print(f"  {p}")
        else:
            print(f"{tag}: replay reproduces the log bitwise "
                  f"({len(log.steps)} steps, {len(log.statuses)} agents)")
        if args.dump_step is not None:
            match = [s for s in log.steps if s["step"] == args.dump_step]
            if not match:
                print(f"  no step {args.dump_step} in this episode")
            else:
                print(json.dumps(match[0], indent=2, sort_keys=True))
    if failures:
        raise RuntimeError(f"{failures} of {len(logs)} episodes failed replay")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    handlers = {
        "gen-cases": _cmd_gen_cases,
        "rollout": _cmd_rollout,
        "evaluate": _cmd_evaluate,
        "replay": _cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # engine or IO failure mid-run
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
