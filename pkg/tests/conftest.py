"""Shared fixtures."""

import os
from pathlib import Path

import numpy as np
import pytest

from src.experiments.spec import ExperimentSpec, load_spec
from src.network.dp_network import NetworkConfig
from src.utils.config import Config, PathsConfig, set_config
from tests.helpers import SCENES


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if os.getenv("SFR_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; set SFR_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_network_config() -> NetworkConfig:
    return NetworkConfig(depth=2, base_filters=12, input_channels=4, seed=0)


@pytest.fixture
def config(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Config:
    monkeypatch.delenv("SFR_WORKERS", raising=False)
    cfg = Config(paths=PathsConfig(output_dir=tmp_path / "runs"))
    set_config(cfg)
    yield cfg
    set_config(None)


@pytest.fixture
def smoke_spec(tmp_path: Path) -> ExperimentSpec:
    return load_spec(SCENES / "smoke.yaml").with_output_dir(tmp_path / "smoke")


@pytest.fixture
def smoke_multi_room_spec(tmp_path: Path) -> ExperimentSpec:
    return load_spec(SCENES / "smoke_multi_room.yaml").with_output_dir(tmp_path / "multi")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
