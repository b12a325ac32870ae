from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from echonav.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_gen_scenes_cli(runner, tmp_path):
    result = runner.invoke(main, ["gen-scenes", "--seed", "5", "--count", "2", "--out", str(tmp_path / "sc")])
    assert result.exit_code == 0, result.output
    body = json.loads(result.output)
    assert len(body["scene_ids"]) == 2


def test_gen_dataset_and_eval_cli(runner, tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(
        json.dumps(
            {
                "scene_counts": {"train": 1, "val": 1, "test": 1},
                "episode_counts": {"train": 2, "val": 1, "test": 2},
            }
        )
    )
    ds = tmp_path / "ds"
    result = runner.invoke(
        main, ["gen-dataset", "--seed", "8", "--config", str(config), "--out", str(ds)]
    )
    assert result.exit_code == 0, result.output
    manifest = json.loads(result.output)["manifest"]
    assert manifest["master_seed"] == 8  # flag overrides config

    out = tmp_path / "run"
    result = runner.invoke(
        main,
        [
            "run-eval",
            "--dataset", str(ds),
            "--agent", "oracle2",
            "--split", "test",
            "--seed", "1",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)["report"]
    assert report["nav"]["n_episodes"] == 2
    assert (out / "report.json").exists()

    result = runner.invoke(main, ["report", "--traces", str(out / "traces")])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["report"]["nav"] == report["nav"]

    trace_file = next((out / "traces").rglob("*.jsonl"))
    wav = tmp_path / "x.wav"
    result = runner.invoke(
        main,
        ["export-audio", "--dataset", str(ds), "--trace", str(trace_file), "--out", str(wav)],
    )
    assert result.exit_code == 0, result.output
    assert wav.exists()


def test_cli_error_is_single_line_json(runner, tmp_path):
    result = runner.invoke(
        main, ["gen-dataset", "--out", str(tmp_path / "x"), "--config", "/nonexistent.json"]
    )
    assert result.exit_code != 0
    # (click validates the path before our handler; error text still surfaces)
    result = runner.invoke(main, ["run-eval", "--dataset", str(tmp_path)])
    assert result.exit_code == 1
    lines = [l for l in (result.stderr or result.output).strip().splitlines() if l]
    parsed = json.loads(lines[-1])
    assert "error" in parsed


def test_train_gdn_cli(runner, tmp_path):
    weights = tmp_path / "w.npz"
    result = runner.invoke(
        main, ["train-gdn", "--episodes", "25", "--epochs", "2", "--seed", "3", "--out", str(weights)]
    )
    assert result.exit_code == 0, result.output
    body = json.loads(result.output)
    assert body["history"]["final_mse"] < body["history"]["initial_mse"]
    assert weights.exists()
