import json

import pytest

from toolself.cli import (
    EXIT_BACKEND_UNAVAILABLE,
    EXIT_OK,
    EXIT_UNKNOWN_SCENARIO,
    EXIT_USAGE,
    ConfigError,
    apply_override,
    load_config,
    main,
)
from toolself.ledger import read_jsonl
from toolself.scenarios import linear_scenario


@pytest.fixture
def logs(tmp_path):
    path = tmp_path / "log.jsonl"
    assert main(["replay", "--scenario", "case1_nasa", "--out", str(path)]) == EXIT_OK
    assert main(["replay", "--scenario", "case2_asean", "--out", str(path)]) == EXIT_OK
    return path


def test_replay_prints_final_answer(capsys, tmp_path):
    assert main(["replay", "--scenario", "case1_nasa"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "final_result: White;5876" in out
    assert "status=finished" in out


def test_unknown_scenario(capsys):
    assert main(["run", "--scenario", "no_such_case"]) == EXIT_UNKNOWN_SCENARIO
    assert "unknown scenario" in capsys.readouterr().err


def test_dead_endpoint(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    code = main(
        ["run", "--task", "anything", "--set", "backend.base_url=http://127.0.0.1:9/v1", "--set", "backend.max_retries=0"]
    )
    assert code == EXIT_BACKEND_UNAVAILABLE


def test_usage_errors(capsys):
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", "--scenario", "case1_nasa", "--set", "budget.bogus=1"]) == EXIT_USAGE


def test_config_overrides(tmp_path):
    cfg = load_config(None, ["limits.max_iterations=12", "budget.swe_mode=true", "mode=wo-how"])
    assert cfg["limits"]["max_iterations"] == 12 and cfg["budget"]["swe_mode"] is True and cfg["mode"] == "wo-how"
    with pytest.raises(ConfigError):
        apply_override(cfg, "nokey")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"limits": {"max_reconfigs": 3}}))
    cfg = load_config(str(path), [])
    assert cfg["limits"] == {"max_iterations": 200, "max_reconfigs": 3, "per_step_timeout": 120.0}


def test_run_writes_normalized_record(tmp_path):
    path = tmp_path / "run.jsonl"
    assert main(["run", "--scenario", "case2_asean", "--out", str(path), "--normalize"]) == EXIT_OK
    (t,) = read_jsonl(path)
    assert t.trajectory_id == "" and "started_at" not in t.metadata
    assert t.final_result == "Indonesia,Myanmar"


def test_inspect_shows_two_tool_stage(logs, capsys):
    assert main(["inspect", str(logs), "--index", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Stage 5" in out
    boxes = [line for line in out.splitlines() if line.startswith("  toolbox: [")]
    assert any(line.count(",") == 1 for line in boxes)
    assert all("code_interpreter" in line for line in boxes)


def test_stats(logs, capsys):
    assert main(["stats", str(logs)]) == EXIT_OK
    stats = json.loads(capsys.readouterr().out)
    assert stats["file_analyzer"] == {"trajectory_frequency": 0.0, "step_frequency": 0.0}


def test_export_without_successes_warns(logs, tmp_path, capsys):
    out_dir = tmp_path / "ds"
    assert main(["export", str(logs), "--format", "sft", "--out", str(out_dir)]) == EXIT_OK
    assert "empty" in capsys.readouterr().err
    assert (out_dir / "sft_inference.jsonl").read_text() == ""


def test_export_with_labels(logs, tmp_path):
    ids = [t.trajectory_id for t in read_jsonl(logs)]
    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps({ids[0]: 1, ids[1]: 0}))
    out_dir = tmp_path / "ds"
    assert main(["export", str(logs), "--format", "kto", "--labels", str(labels), "--out", str(out_dir)]) == EXIT_OK
    records = [json.loads(x) for x in (out_dir / "kto_inference.jsonl").read_text().splitlines()]
    assert sorted(r["label"] for r in records) == [0] * 5 + [1] * 5


def test_ablate_empty_set(capsys):
    with pytest.warns(UserWarning):
        assert main(["ablate"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == {"rows": []}


def test_fixed_interval_reconfigures_more(tmp_path, capsys):
    path = tmp_path / "linear7.json"
    path.write_text(json.dumps(linear_scenario(7).to_dict()))
    code = main(["ablate", "--scenario", str(path), "--mode", "full", "--mode", "wo-when", "--workers", "1"])
    assert code == EXIT_OK
    rows = {r["mode"]: r for r in json.loads(capsys.readouterr().out)["rows"]}
    assert rows["full"]["reconfigs"] == 0
    assert rows["wo-when"]["reconfigs"] == 1
    assert rows["full"]["success"] and rows["wo-when"]["success"]
