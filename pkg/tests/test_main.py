"""Tests for the command-line entry point."""

import logging

import pytest

from src.experiments.commands import CHECKPOINT_FILE, TRAJECTORY_FILE
from src.main import build_parser, main
from src.utils.config import set_config
from tests.helpers import SCENES

SMOKE = str(SCENES / "smoke.yaml")


@pytest.fixture(autouse=True)
def restore_logging(monkeypatch):
    monkeypatch.delenv("SFR_WORKERS", raising=False)
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
    set_config(None)


def _run(tmp_path, *args: str) -> int:
    return main(["--config", str(tmp_path / "none.yaml"), *args])


def test_pretrain(tmp_path):
    out = tmp_path / "out"
    assert _run(tmp_path, "pretrain", "--spec", SMOKE, "--out", str(out)) == 0
    assert (out / CHECKPOINT_FILE).exists()
    assert (out / TRAJECTORY_FILE).exists()


def test_pretrain_then_adapt_and_report(tmp_path, capsys):
    pre, lora = tmp_path / "pre", tmp_path / "lora"
    assert _run(tmp_path, "pretrain", "--spec", SMOKE, "--out", str(pre)) == 0
    args = ["adapt", "--spec", SMOKE, "--out", str(lora), "--mode", "lora", "--rank", "1"]
    assert _run(tmp_path, *args, "--checkpoint", str(pre / CHECKPOINT_FILE)) == 0
    assert (lora / "adapters.sfra").exists()

    capsys.readouterr()
    assert _run(tmp_path, "report", str(tmp_path)) == 0
    assert "adapt lora on box/1" in capsys.readouterr().out


def test_seed_override(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(tmp_path, "pretrain", "--spec", SMOKE, "--out", str(a), "--seed", "3") == 0
    assert _run(tmp_path, "pretrain", "--spec", SMOKE, "--out", str(b)) == 0
    assert (a / CHECKPOINT_FILE).read_bytes() != (b / CHECKPOINT_FILE).read_bytes()


def test_report_on_empty_directory_fails(tmp_path):
    (tmp_path / "empty").mkdir()
    assert _run(tmp_path, "report", str(tmp_path / "empty")) == 1


def test_finetune_without_checkpoint_fails(tmp_path):
    args = ["adapt", "--spec", SMOKE, "--out", str(tmp_path / "ft"), "--mode", "ft"]
    assert _run(tmp_path, *args) == 1


def test_missing_spec_fails(tmp_path):
    assert _run(tmp_path, "pretrain", "--spec", str(tmp_path / "nope.yaml")) == 1


def test_invalid_config_fails(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text("runtime:\n  workers: -2\n", encoding="utf-8")
    assert main(["--config", str(config), "report", str(tmp_path)]) == 1


def test_unknown_mode_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["adapt", "--spec", SMOKE, "--mode", "partial"])
    assert excinfo.value.code == 2
