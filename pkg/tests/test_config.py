"""Tests for runtime configuration loading."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from src.utils.config import PROJECT_ROOT, Config, get_config, load_config, set_config


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("SFR_WORKERS", raising=False)
    monkeypatch.delenv("SFR_CONFIG", raising=False)
    yield
    set_config(None)


def test_missing_file_gives_defaults(tmp_path):
    config = load_config(tmp_path / "absent.yaml")
    assert config.runtime.workers == 1
    assert config.runtime.device == "cpu"
    assert config.plots.format == "svg"
    assert config.paths.output_dir == (PROJECT_ROOT / "runs").resolve()


def test_yaml_values(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        "runtime:\n  workers: 3\n  torch_threads: 2\n"
        "paths:\n  output_dir: /tmp/sfr-out\n"
        "plots:\n  format: png\n"
        "log_level: DEBUG\n",
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.runtime.workers == 3
    assert config.runtime.torch_threads == 2
    assert config.paths.output_dir == Path("/tmp/sfr-out")
    assert config.plots.format == "png"
    assert config.log_level == "DEBUG"


def test_env_workers_override(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("runtime:\n  workers: 3\n", encoding="utf-8")
    monkeypatch.setenv("SFR_WORKERS", "6")
    assert load_config(path).runtime.workers == 6


def test_config_path_from_env(tmp_path, monkeypatch):
    path = tmp_path / "other.yaml"
    path.write_text("log_level: WARNING\n", encoding="utf-8")
    monkeypatch.setenv("SFR_CONFIG", str(path))
    assert load_config().log_level == "WARNING"


def test_invalid_values(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("runtime:\n  workers: 0\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(path)


def test_global_instance():
    config = Config()
    set_config(config)
    assert get_config() is config
