"""Command-line interface: config handling, outputs, exit codes."""

import json
import os

import pytest
import yaml

from socialflow.cli import OUTPUT_DIR_ENV, main
from socialflow.rollout import read_log, read_logs, write_log

DATA = os.path.join(os.path.dirname(__file__), "data")
TINY_ACTION = os.path.join(DATA, "tiny_action.svow")
TINY_SVO = os.path.join(DATA, "tiny_svo.svow")


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture()
def case_file(tmp_path):
    path = tmp_path / "cases.yaml"
    rc = run_cli("gen-cases", "--scenario", "merge", "--n", "2",
                 "--seed", "5", "--out", str(path),
                 "--output-dir", str(tmp_path / "gen"))
    assert rc == 0
    return path


def write_config(tmp_path, case_file, **extra):
    doc = {
        "scenario": "merge",
        "cases": str(case_file),
        "flow": "idm",
        "seeds": {"master": 3, "repeats": 1},
        "episode": {"max_steps": 50},
    }
    doc.update(extra)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


class TestGenCases:
    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
        for out in (a, b):
            rc = run_cli("gen-cases", "--scenario", "merge", "--n", "3",
                         "--seed", "11", "--out", str(out),
                         "--output-dir", str(tmp_path / "g"))
            assert rc == 0
        assert a.read_text() == b.read_text()

    def test_manifest_written(self, tmp_path):
        out_dir = tmp_path / "g"
        rc = run_cli("gen-cases", "--scenario", "merge", "--n", "1",
                     "--seed", "2", "--output-dir", str(out_dir))
        assert rc == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["command"] == "gen-cases"
        assert manifest["master_seed"] == 2
        assert manifest["engine_version"]
        assert len(manifest["config_sha256"]) == 64

    def test_unknown_scenario_is_config_error(self, tmp_path):
        rc = run_cli("gen-cases", "--scenario", "nowhere", "--n", "1",
                     "--seed", "1", "--output-dir", str(tmp_path))
        assert rc == 1


class TestRollout:
    def test_outputs_and_manifest(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file)
        out = tmp_path / "run_out"
        rc = run_cli("rollout", "--config", str(cfg), "--output-dir", str(out))
        assert rc == 0
        table = capsys.readouterr().out
        assert "merge" in table and "Success" in table
        assert (out / "metrics.csv").exists()
        assert (out / "metrics.txt").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["episodes"] == 2
        assert manifest["master_seed"] == 3
        assert not (out / "logs.ndjson.gz").exists()

    def test_save_logs_round_trip(self, tmp_path, case_file):
        cfg = write_config(tmp_path, case_file, save_logs=True)
        out = tmp_path / "run_out"
        rc = run_cli("rollout", "--config", str(cfg), "--output-dir", str(out))
        assert rc == 0
        logs = read_logs(str(out / "logs.ndjson.gz"))
        assert len(logs) == 2
        assert all(lg.steps for lg in logs)

    def test_unknown_config_key_names_field(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file, turbo=True)
        rc = run_cli("rollout", "--config", str(cfg),
                     "--output-dir", str(tmp_path / "o"))
        assert rc == 1
        assert "turbo" in capsys.readouterr().err

    def test_bad_nested_key_names_field(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file, seeds={"master": 1, "chain": 4})
        rc = run_cli("rollout", "--config", str(cfg),
                     "--output-dir", str(tmp_path / "o"))
        assert rc == 1
        assert "chain" in capsys.readouterr().err

    def test_unknown_flag_is_config_error(self, tmp_path, case_file):
        cfg = write_config(tmp_path, case_file)
        rc = run_cli("rollout", "--config", str(cfg), "--with-lasers")
        assert rc == 1

    def test_missing_config_file(self, tmp_path):
        rc = run_cli("rollout", "--config", str(tmp_path / "absent.yaml"))
        assert rc == 1

    def test_scenario_case_mismatch(self, tmp_path, case_file):
        cfg = write_config(tmp_path, case_file, scenario="bottleneck")
        rc = run_cli("rollout", "--config", str(cfg),
                     "--output-dir", str(tmp_path / "o"))
        assert rc == 1

    def test_adversarial_comm_needs_ego(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file,
                           comm_mode=f"adversarial:{TINY_SVO}")
        rc = run_cli("rollout", "--config", str(cfg),
                     "--output-dir", str(tmp_path / "o"))
        assert rc == 1
        assert "ego" in capsys.readouterr().err

    def test_env_var_output_dir(self, tmp_path, case_file, monkeypatch):
        cfg = write_config(tmp_path, case_file)
        target = tmp_path / "from_env"
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(target))
        rc = run_cli("rollout", "--config", str(cfg))
        assert rc == 0
        assert (target / "manifest.json").exists()

    def test_flag_overrides_env_var(self, tmp_path, case_file, monkeypatch):
        cfg = write_config(tmp_path, case_file)
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "ignored"))
        explicit = tmp_path / "explicit"
        rc = run_cli("rollout", "--config", str(cfg),
                     "--output-dir", str(explicit))
        assert rc == 0
        assert (explicit / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_repeated_runs_identical_metrics(self, tmp_path, case_file):
        cfg = write_config(tmp_path, case_file)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run_cli("rollout", "--config", str(cfg),
                           "--output-dir", str(out)) == 0
            outs.append((out / "metrics.csv").read_text())
        assert outs[0] == outs[1]


class TestEvaluate:
    def test_grid_over_flows(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file,
                           comm_mode=f"adversarial:{TINY_SVO}")
        out = tmp_path / "eval_out"
        rc = run_cli("evaluate", "--config", str(cfg),
                     "--ego-weights", TINY_ACTION,
                     "--flows", "idm", "--output-dir", str(out))
        assert rc == 0
        assert "idm" in capsys.readouterr().out
        assert (out / "evaluate.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["flows"] == ["idm"]
        assert manifest["ego_weights"].endswith("tiny_action.svow")

    def test_adversary_weights_cannot_be_ego(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file)
        rc = run_cli("evaluate", "--config", str(cfg),
                     "--ego-weights", TINY_SVO,
                     "--flows", "idm", "--output-dir", str(tmp_path / "o"))
        assert rc == 1
        assert "ego-weights" in capsys.readouterr().err

    def test_missing_weights_file(self, tmp_path, case_file):
        cfg = write_config(tmp_path, case_file)
        rc = run_cli("evaluate", "--config", str(cfg),
                     "--ego-weights", str(tmp_path / "ghost.svow"),
                     "--flows", "idm", "--output-dir", str(tmp_path / "o"))
        assert rc == 1


class TestReplay:
    def test_clean_log_passes(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file, save_logs=True)
        out = tmp_path / "run_out"
        assert run_cli("rollout", "--config", str(cfg),
                       "--output-dir", str(out)) == 0
        rc = run_cli("replay", "--log", str(out / "logs.ndjson.gz"))
        assert rc == 0
        assert "bitwise" in capsys.readouterr().out

    def test_tampered_log_exits_two(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file, save_logs=True)
        out = tmp_path / "run_out"
        assert run_cli("rollout", "--config", str(cfg),
                       "--output-dir", str(out)) == 0
        log = read_logs(str(out / "logs.ndjson.gz"))[0]
        aid = next(iter(log.steps[5]["agents"]))
        log.steps[5]["agents"][aid]["action"][0] += 0.5
        bad = tmp_path / "bad.ndjson"
        write_log(log, str(bad))
        rc = run_cli("replay", "--log", str(bad))
        assert rc == 2
        assert "MISMATCH" in capsys.readouterr().out

    def test_dump_step_prints_record(self, tmp_path, case_file, capsys):
        cfg = write_config(tmp_path, case_file, save_logs=True)
        out = tmp_path / "run_out"
        assert run_cli("rollout", "--config", str(cfg),
                       "--output-dir", str(out)) == 0
        first = read_logs(str(out / "logs.ndjson.gz"))[0]
        single = tmp_path / "one.ndjson"
        write_log(first, str(single))
        rc = run_cli("replay", "--log", str(single), "--dump-step", "3")
        assert rc == 0
        assert '"pose"' in capsys.readouterr().out

    def test_missing_log_is_config_error(self, tmp_path):
        rc = run_cli("replay", "--log", str(tmp_path / "void.ndjson"))
        assert rc == 1


class TestEntryPoint:
    def test_console_script_help(self):
        import subprocess
        out = subprocess.run(["socialflow", "--help"],
                             capture_output=True, text=True)
        assert out.returncode == 0
        for sub in ("gen-cases", "rollout", "evaluate", "replay"):
            assert sub in out.stdout
