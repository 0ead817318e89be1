import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import SMALL
from sdim_logit.cli import main
from sdim_logit.config import RunConfig, load_config
from sdim_logit.data import LogitDataset, save_logit_dataset

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def small_yaml(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


@pytest.fixture(scope="module")
def piped(small_yaml, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    code = main(["pipeline", "--config", str(small_yaml), "--out", str(out)])
    return code, out


def run(*argv):
    return main([str(a) for a in argv])


def test_shipped_config_is_the_default():
    cfg, text = load_config(ROOT / "configs" / "default.yaml")
    assert cfg == RunConfig() and text


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "pipeline" in capsys.readouterr().out


def test_no_command_is_usage_error():
    assert run() == 1


def test_pipeline_writes_artifacts(piped, small_yaml):
    code, out = piped
    assert code == 0
    for name in ("config.yaml", "config.resolved.json", "base.json", "head.json", "loss_trace.json",
                 "thresholds_p1.json", "thresholds_p2.json", "summary.json", "reports/clean.csv",
                 "reports/adv.json", "data/train.csv", "logits/train.csv"):
        assert (out / name).exists(), name
    assert (out / "config.yaml").read_text() == small_yaml.read_text()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["head_param_count"] == summary["head_param_count_analytic"]


def test_chained_subcommands_equal_pipeline(piped, small_yaml, tmp_path):
    _, ref = piped
    cfg, d = small_yaml, tmp_path
    assert run("gen-data", "--config", cfg, "--out", d / "data") == 0
    assert run("train-base", "--config", cfg, "--data", d / "data", "--out", d) == 0
    assert run("export-logits", "--base", d / "base.json", "--data", d / "data", "--out", d / "logits") == 0
    assert run("train-head", "--config", cfg, "--logits", d / "logits" / "train.csv", "--out", d) == 0
    for p in ("1", "2"):
        assert run("calibrate", "--head", d / "head.json", "--logits", d / "logits" / "train.csv",
                   "--percentile", p, "--out", d) == 0
    for cond in ("clean", "corrupt", "adv", "ood"):
        assert run("eval", cond, "--config", cfg, "--head", d / "head.json", "--base", d / "base.json",
                   "--thresholds", d / "thresholds_p1.json", "--thresholds", d / "thresholds_p2.json",
                   "--data", d / "data", "--out", d / "reports") == 0
    same = ["base.json", "head.json", "loss_trace.json", "thresholds_p1.json", "thresholds_p2.json",
            "logits/train.csv", "data/test.csv"]
    same += [f"reports/{c}.{f}" for c in ("clean", "corrupt", "adv", "ood") for f in ("json", "csv")]
    for name in same:
        assert (d / name).read_bytes() == (ref / name).read_bytes(), name


def test_train_head_from_base_and_data(piped, small_yaml, tmp_path):
    _, ref = piped
    assert run("train-head", "--config", small_yaml, "--base", ref / "base.json",
               "--data", ref / "data", "--out", tmp_path) == 0
    assert (tmp_path / "loss_trace.json").read_bytes() == (ref / "loss_trace.json").read_bytes()


def test_rerun_is_byte_identical(piped, small_yaml, tmp_path):
    _, ref = piped
    assert run("pipeline", "--config", small_yaml, "--out", tmp_path) == 0
    for f in sorted((ref / "reports").glob("*.json")):
        assert (tmp_path / "reports" / f.name).read_bytes() == f.read_bytes()


def test_output_dir_from_environment(piped, monkeypatch, tmp_path):
    _, ref = piped
    monkeypatch.setenv("SDIM_LOGIT_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("SDIM_LOGIT_THREADS", "1")
    assert run("calibrate", "--head", ref / "head.json", "--logits", ref / "logits" / "train.csv") == 0
    assert (tmp_path / "env" / "thresholds_p1.json").exists()


def test_missing_file(tmp_path, capsys):
    assert run("calibrate", "--head", tmp_path / "nope.json", "--logits", tmp_path / "x.csv",
               "--out", tmp_path) == 1
    assert "does not exist" in capsys.readouterr().err


def test_version_two_checkpoint(piped, tmp_path, capsys):
    _, ref = piped
    bad = tmp_path / "head.json"
    bad.write_text((ref / "head.json").read_text().replace('"format_version": 1', '"format_version": 2', 1))
    assert run("calibrate", "--head", bad, "--logits", ref / "logits" / "train.csv", "--out", tmp_path) == 1
    assert "unsupported format_version 2" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    for text in ("head: {alpha: 0, beta: 0, gamma: 0}\n", "data: {n_clases: 3}\n", "seed: [1\n",
                 "attack: {target: svm}\n"):
        (tmp_path / "c.yaml").write_text(text)
        assert run("gen-data", "--config", tmp_path / "c.yaml", "--out", tmp_path) == 1
    assert "n_clases" in capsys.readouterr().err


def test_runtime_error_exit_code(piped, tmp_path, capsys):
    _, ref = piped
    # only class 0 present: classes 1 and 2 have nothing to calibrate on
    save_logit_dataset(LogitDataset([0, 0], np.array([[5.0, 0, 0], [4.0, 0, 0]]), 3), tmp_path / "one.csv")
    assert run("calibrate", "--head", ref / "head.json", "--logits", tmp_path / "one.csv",
               "--out", tmp_path) == 2
    assert "class 1" in capsys.readouterr().err


def test_check_failure_exit_code(piped, small_yaml, tmp_path, monkeypatch):
    import sdim_logit.pipeline as pl

    monkeypatch.setattr(pl, "acceptance_checks", lambda *a: {"always_fails": False})
    assert run("pipeline", "--config", small_yaml, "--out", tmp_path) == 0
    assert run("pipeline", "--check", "--config", small_yaml, "--out", tmp_path) == 3
