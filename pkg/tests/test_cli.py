import json
import os

import pytest

from vpoc.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_OK, main

FAST = ["--set", "env.horizon=15", "--set", "agent.warmup=20"]


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small collect -> train-detector -> eval-detector -> train -> eval run."""
    out = str(tmp_path_factory.mktemp("run"))
    assert main(["collect", "--out", out, "--num-plants", "6", "--num-views", "4"]) == EXIT_OK
    assert main(["train-detector", "--out", out, "--set", "grid.epochs=3"]) == EXIT_OK
    assert main(["eval-detector", "--out", out]) == EXIT_OK
    assert main(["train", "--out", out, "--episodes", "3", *FAST]) == EXIT_OK
    ckpt = os.path.join(out, "train", "checkpoints", "latest.vpoc")
    assert main(["eval", "--out", out, "--policy", "random", "--policy", "ddpg", "--checkpoint", ckpt, "--episodes", "2", *FAST]) == EXIT_OK
    return out


def test_pipeline_artifacts(pipeline):
    for rel in (
        "dataset/annotations.jsonl",
        "dataset/manifest.json",
        "detector/grid_params.json",
        "detector_eval/pr.csv",
        "detector_eval/pr.svg",
        "train/train_log.jsonl",
        "train/checkpoints/latest.vpoc",
        "train/summary.json",
        "eval/summary.csv",
        "eval/mean_return.svg",
        "eval/fixation.json",
        "eval/records_ddpg.jsonl",
    ):
        assert os.path.exists(os.path.join(pipeline, rel)), rel
    manifest = json.load(open(os.path.join(pipeline, "dataset", "manifest.json")))
    assert manifest["frames"] == 24
    log = [json.loads(line) for line in open(os.path.join(pipeline, "train", "train_log.jsonl"))]
    assert [r["episode"] for r in log] == [0, 1, 2]


def test_collect_is_deterministic(tmp_path, pipeline):
    out = str(tmp_path)
    assert main(["collect", "--out", out, "--num-plants", "6", "--num-views", "4", "--workers", "3"]) == EXIT_OK
    assert read(os.path.join(out, "dataset", "annotations.jsonl")) == read(os.path.join(pipeline, "dataset", "annotations.jsonl"))


def test_train_and_eval_are_deterministic(tmp_path, pipeline):
    out = str(tmp_path)
    assert main(["train", "--out", out, "--episodes", "3", *FAST]) == EXIT_OK
    assert read(os.path.join(out, "train", "train_log.jsonl")) == read(os.path.join(pipeline, "train", "train_log.jsonl"))
    ckpt = os.path.join(out, "train", "checkpoints", "latest.vpoc")
    assert main(["eval", "--out", out, "--policy", "random", "--policy", "ddpg", "--checkpoint", ckpt, "--episodes", "2", *FAST]) == EXIT_OK
    assert read(os.path.join(out, "eval", "summary.csv")) == read(os.path.join(pipeline, "eval", "summary.csv"))


def test_resume_continues_the_log(tmp_path, pipeline):
    out = str(tmp_path)
    args = ["train", "--out", out, *FAST, "--set", "train.checkpoint_every=2"]
    assert main([*args, "--episodes", "2"]) == EXIT_OK
    assert main([*args, "--episodes", "4", "--resume"]) == EXIT_OK
    log = [json.loads(line) for line in open(os.path.join(out, "train", "train_log.jsonl"))]
    assert [r["episode"] for r in log] == [0, 1, 2, 3]


def test_plot_redraws_figures(pipeline):
    assert main(["plot", "--out", pipeline]) == EXIT_OK
    assert main(["plot", "--out", pipeline, "--input", os.path.join(pipeline, "detector_eval")]) == EXIT_OK


def test_grid_detector_drives_the_environment(pipeline):
    params = os.path.join(pipeline, "detector", "grid_params.json")
    assert main(["eval", "--out", pipeline, "--detector", "grid", "--params", params, "--policy", "proportional", "--episodes", "1", *FAST]) == EXIT_OK


# -- exit codes -----------------------------------------------------------------


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path), "--set", "env.nosuch=1"]) == EXIT_CONFIG
    assert main(["eval", "--out", str(tmp_path), "--set", "env.horizon"]) == EXIT_CONFIG
    assert main(["eval", "--out", str(tmp_path), "--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_ddpg_without_checkpoint_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--out", str(tmp_path), "--policy", "ddpg"])
    assert exc.value.code == 2


def test_unwritable_output_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["collect", "--out", str(blocker), "--num-plants", "1", "--num-views", "1"]) == EXIT_IO


def test_missing_artifacts_exit_4(tmp_path):
    out = str(tmp_path)
    assert main(["train-detector", "--out", out]) == EXIT_MISSING
    assert main(["eval-detector", "--out", out]) == EXIT_MISSING
    assert main(["eval", "--out", out, "--detector", "grid", "--policy", "random"]) == EXIT_MISSING
    assert main(["eval", "--out", out, "--policy", "ddpg", "--checkpoint", str(tmp_path / "none.vpoc")]) == EXIT_MISSING
    assert main(["train", "--out", out, "--resume", "--episodes", "1"]) == EXIT_MISSING
    assert main(["plot", "--out", out]) == EXIT_MISSING


def test_incompatible_checkpoint_exits_5(tmp_path, pipeline):
    ckpt = os.path.join(pipeline, "train", "checkpoints", "latest.vpoc")
    # a pixels environment cannot run a features-trained actor
    assert main(["eval", "--out", str(tmp_path), "--observation", "pixels", "--policy", "ddpg", "--checkpoint", ckpt, "--episodes", "1"]) == EXIT_CHECKPOINT
    junk = tmp_path / "junk.vpoc"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--out", str(tmp_path), "--policy", "ddpg", "--checkpoint", str(junk), "--episodes", "1"]) == EXIT_CHECKPOINT
