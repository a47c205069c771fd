"""Tests for experiment specs and the versioned scene files."""

import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from src.core.errors import InvalidArgumentError
from src.experiments.spec import (
    ExperimentSpec,
    MaskSpec,
    MaskStrategy,
    Scenario,
    load_spec,
)
from tests.helpers import SCENES

SCENE_FILES = sorted(p.name for p in SCENES.glob("*.yaml"))


def _minimal(**overrides) -> dict:
    data = {
        "rooms": [{"name": "a", "dimensions_m": [4.0, 3.0, 2.5], "t60_s": 0.3}],
        "sources": [{"position_m": [1.1, 1.3, 1.2]}, {"position_m": [1.1, 1.9, 1.2]}],
        "array": {"first_mic_position_m": [1.0, 1.0, 1.2], "num_mics": 8},
        "pretrain_mask": {"count": 8},
        "adapt_mask": {"count": 4},
        "rir_length": 64,
    }
    data.update(overrides)
    return data


@pytest.mark.parametrize("name", SCENE_FILES)
def test_scene_files_load(name):
    spec = load_spec(SCENES / name)
    assert spec.name == name.removesuffix(".yaml")


def test_single_room_scene():
    spec = load_spec(SCENES / "single_room.yaml")
    assert spec.scenario == Scenario.SINGLE_ROOM_SOURCE_MOVE
    assert spec.grid_dims == (1024, 32)
    assert spec.sample_rate_hz == 8000.0
    assert spec.rooms[0].t60_s == 0.4
    assert spec.sweeps.ranks == [1, 2, 4, 8, 16, 32, 64]


def test_multi_room_scene():
    spec = load_spec(SCENES / "multi_room.yaml")
    assert spec.scenario == Scenario.MULTI_ROOM
    assert [room.name for room in spec.rooms] == ["balder", "munin", "freja"]
    assert [room.t60_s for room in spec.rooms] == [0.32, 0.46, 0.63]
    assert spec.sweeps.cross_room_counts == [20, 33]


def test_with_seed_replaces_all_seeds(smoke_spec):
    seeded = smoke_spec.with_seed(42)
    assert seeded.network.seed == 42
    assert seeded.noise.seed == 42
    assert seeded.train.seed == 42
    assert seeded.adapt_mask == smoke_spec.adapt_mask


def test_room_lookup(smoke_spec):
    assert smoke_spec.room().name == "box"
    assert smoke_spec.room("box").name == "box"
    with pytest.raises(InvalidArgumentError):
        smoke_spec.room("attic")


def test_single_room_needs_two_sources():
    data = _minimal(sources=[{"position_m": [1.1, 1.3, 1.2]}])
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate(data)


def test_multi_room_needs_two_rooms():
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate(_minimal(scenario="multi_room"))


def test_duplicate_room_names():
    room = {"name": "a", "dimensions_m": [4.0, 3.0, 2.5], "t60_s": 0.3}
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate(_minimal(rooms=[room, room]))


def test_mask_larger_than_array():
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate(_minimal(adapt_mask={"count": 9}))


def test_microphones_outside_room():
    array = {"first_mic_position_m": [3.9, 1.0, 1.2], "num_mics": 8}
    with pytest.raises(ValidationError, match="outside room"):
        ExperimentSpec.model_validate(_minimal(array=array))


def test_mask_spec_strategies():
    uniform = MaskSpec(count=4, strategy=MaskStrategy.UNIFORM).build(8)
    assert uniform.indices == (0, 2, 5, 7)
    random = MaskSpec(count=4, seed=3).build(8)
    assert random.size == 4
    assert random == MaskSpec(count=4, seed=3).build(8)
    assert MaskSpec(count=4, seed=3).with_count(2).seed == 3
    with pytest.raises(InvalidArgumentError):
        MaskSpec(count=9).build(8)


def test_measured_grid_paths_resolve_against_scene(tmp_path):
    (tmp_path / "data").mkdir()
    np.zeros((64, 8), dtype="<f4").tofile(tmp_path / "data" / "box.bin")
    layout = {"N": 64, "M": 8, "sample_rate_hz": 8000.0}
    data = _minimal(measured_grids=[{"room": "a", "path": "data/box.bin", "layout": layout}])
    scene = tmp_path / "scene.yaml"
    scene.write_text(yaml.safe_dump(data), encoding="utf-8")

    spec = load_spec(scene)
    measured = spec.measured("a", 0)
    assert measured.path == (tmp_path / "data" / "box.bin").resolve()
    assert spec.measured("a", 1) is None


def test_measured_grid_must_exist(tmp_path):
    layout = {"N": 64, "M": 8, "sample_rate_hz": 8000.0}
    data = _minimal(measured_grids=[{"room": "a", "path": "missing.bin", "layout": layout}])
    scene = tmp_path / "scene.yaml"
    scene.write_text(yaml.safe_dump(data), encoding="utf-8")
    with pytest.raises(FileNotFoundError):
        load_spec(scene)


def test_measured_grid_dims_must_match(tmp_path):
    (tmp_path / "box.bin").write_bytes(b"")
    layout = {"N": 32, "M": 8, "sample_rate_hz": 8000.0}
    data = _minimal(measured_grids=[{"room": "a", "path": "box.bin", "layout": layout}])
    scene = tmp_path / "scene.yaml"
    scene.write_text(yaml.safe_dump(data), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_spec(scene)
