import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from morphdyn.cli import main

MICRO = [
    "--set", "synth.n=5", "--set", "synth.train=3", "--set", "synth.val=0",
    "--set", "synth.test=2", "--set", "synth.resolution=40",
    "--set", "sample.n_uniform=200", "--set", "sample.n_near=1200",
    "--set", "model.depth=2", "--set", "model.width=160", "--set", "model.skip=1",
    "--set", "train.epochs=220", "--set", "train.samples_per_draw=320",
    "--set", "train.frames_per_step=4", "--set", "train.lr_net=1e-3",
    "--set", "train.lr_latent=2e-3", "--set", "train.lr_half_epochs=90",
    "--set", "complete.iterations=12", "--set", "complete.resolution=32",
    "--set", "complete.samples_per_iter=512",
    "--set", "generate.count=2", "--set", "generate.resolution=32",
    "--set", "generate.std_scale=0.25",
    "--set", "eval.metric_samples=600",
]


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One micro pipeline run shared by the assertions below."""
    out = tmp_path_factory.mktemp("pipeline")
    # generation needs demographies the micro model has actually seen
    demo_file = out / "demography.json"
    demo_file.write_text(json.dumps(
        [{"gender": "female", "age_group": "50-59", "sbp": 0.5}] * 2))
    for cmd in ("synth", "preprocess", "train", "complete", "evaluate",
                "generate", "pca"):
        extra = ["--demography", str(demo_file)] if cmd == "generate" else []
        code = run_cli(cmd, "--out", str(out), "--seed", "11", *MICRO, *extra)
        assert code == 0, f"{cmd} failed"
    return out


def test_pipeline_artifacts_exist(pipeline_dir):
    out = pipeline_dir
    assert (out / "cohort" / "cohort.csv").exists()
    assert (out / "cohort" / "manifest.json").exists()
    assert (out / "prep" / "norm.json").exists()
    assert (out / "model" / "checkpoint.mdyn").exists()
    assert (out / "model" / "train_report.csv").exists()
    assert (out / "model" / "train_loss.svg").exists()
    comps = list((out / "completions").glob("seq_*/volumes.csv"))
    assert len(comps) == 2
    assert (out / "eval" / "completion_table.csv").exists()
    assert (out / "eval" / "fc_subgroups.svg").exists()
    assert (out / "generated" / "summary.csv").exists()
    assert (out / "pca" / "pca_zc.csv").exists()
    assert (out / "pca" / "pca_zr.svg").exists()


def test_completion_outputs_20_frames(pipeline_dir):
    seq_dirs = sorted((pipeline_dir / "completions").glob("seq_*"))
    objs = list(seq_dirs[0].glob("frame_*.obj"))
    assert len(objs) == 20


def test_manifest_reproducibility_fields(pipeline_dir):
    manifest = json.loads(
        (pipeline_dir / "model" / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 11
    assert "config_hash" in manifest
    assert "git_describe" in manifest


def test_synth_twice_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--set", "synth.n=2", "--set", "synth.train=1", "--set", "synth.val=0",
            "--set", "synth.test=1", "--set", "synth.resolution=32"]
    assert run_cli("synth", "--out", str(a), "--seed", "7", *args) == 0
    assert run_cli("synth", "--out", str(b), "--seed", "7", *args) == 0
    ma = (a / "cohort" / "manifest.json").read_text()
    mb = (b / "cohort" / "manifest.json").read_text()
    assert ma == mb
    for obj in sorted((a / "cohort").glob("seq_*/frame_*.obj")):
        other = b / "cohort" / obj.parent.name / obj.name
        assert obj.read_bytes() == other.read_bytes()


def test_complete_without_checkpoint_names_producer(tmp_path, capsys):
    out = tmp_path / "x"
    args = ["--set", "synth.n=2", "--set", "synth.train=1", "--set", "synth.val=0",
            "--set", "synth.test=1", "--set", "synth.resolution=32"]
    assert run_cli("synth", "--out", str(out), "--seed", "3", *args) == 0
    code = run_cli("complete", "--out", str(out), "--seed", "3")
    captured = capsys.readouterr()
    assert code == 1
    assert "morphdyn train" in captured.err


def test_unknown_config_key_lists_valid(tmp_path, capsys):
    code = run_cli("synth", "--out", str(tmp_path), "--set", "bogus.key=1")
    captured = capsys.readouterr()
    assert code == 1
    assert "unknown config key" in captured.err
    assert "synth.n" in captured.err


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("synth.n=3\nsynth.resolution=32\n# comment\n")
    from morphdyn.config import resolve
    resolved = resolve(cfg, ["synth.n=5"])
    assert resolved["synth.n"] == 5
    assert resolved["synth.resolution"] == 32


def test_bad_config_line_reports_position(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("synth.n\n")
    from morphdyn.config import ConfigError, resolve
    with pytest.raises(ConfigError, match="run.cfg:1"):
        resolve(cfg, [])


def test_cli_entrypoint_subprocess():
    proc = subprocess.run([sys.executable, "-m", "morphdyn.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
