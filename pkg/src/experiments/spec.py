"""Experiment specifications loaded from YAML scene files."""

from enum import Enum
from pathlib import Path
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.acoustics.models import ArrayGeometry, RoomSpec, SourceSpec
from src.core.errors import GeometryError, InvalidArgumentError
from src.core.signal import SamplingMask, make_random_mask, make_uniform_mask
from src.core.trainer import TrainConfig
from src.network.dp_network import NetworkConfig
from src.storage.models import ExternalLayout


class Scenario(str, Enum):
    """Adaptation protocol a spec describes."""

    SINGLE_ROOM_SOURCE_MOVE = "single_room_source_move"
    MULTI_ROOM = "multi_room"


class MaskStrategy(str, Enum):
    """How observed microphones are chosen."""

    RANDOM = "random"
    UNIFORM = "uniform"


class MaskSpec(BaseModel):
    """Number of observed microphones and how to pick them."""

    model_config = ConfigDict(frozen=True)

    count: int = Field(ge=1)
    seed: int = 0
    strategy: MaskStrategy = MaskStrategy.RANDOM

    def build(self, total_channels: int) -> SamplingMask:
        if self.count > total_channels:
            raise InvalidArgumentError(
                f"Mask count {self.count} exceeds the {total_channels} available channels"
            )
        if self.strategy == MaskStrategy.UNIFORM:
            return make_uniform_mask(total_channels, self.count)
        return make_random_mask(total_channels, self.count, self.seed)

    def with_count(self, count: int) -> "MaskSpec":
        return MaskSpec(count=count, seed=self.seed, strategy=self.strategy)


class NoiseSpec(BaseModel):
    """Fixed network input: zero-mean white noise."""

    model_config = ConfigDict(frozen=True)

    variance: float = Field(default=0.1, gt=0)
    seed: int = 0


class MeasuredGrid(BaseModel):
    """Externally measured ground truth replacing the simulation for one room/source."""

    model_config = ConfigDict(frozen=True)

    room: str
    source: int = Field(default=0, ge=0)
    path: Path
    layout: ExternalLayout


class SweepDefaults(BaseModel):
    """Parameters of the sweep commands when not given on the command line."""

    model_config = ConfigDict(frozen=True)

    ranks: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    mic_counts: list[int] = Field(default_factory=lambda: [4, 8, 16, 32])
    cross_room_counts: list[int] = Field(default_factory=lambda: [20, 33])
    cross_room_mask: MaskStrategy = MaskStrategy.UNIFORM
    lora_rank: int = Field(default=16, ge=1)


class ExperimentSpec(BaseModel):
    """Everything needed to reproduce one experiment."""

    model_config = ConfigDict(frozen=True)

    name: str = "experiment"
    scenario: Scenario = Scenario.SINGLE_ROOM_SOURCE_MOVE
    rooms: list[RoomSpec] = Field(min_length=1)
    sources: list[SourceSpec] = Field(min_length=1)
    array: ArrayGeometry
    sample_rate_hz: float = Field(default=8000.0, gt=0)
    rir_length: int = Field(default=1024, ge=1)
    pretrain_mask: MaskSpec = Field(default_factory=lambda: MaskSpec(count=32))
    adapt_mask: MaskSpec = Field(default_factory=lambda: MaskSpec(count=8))
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sweeps: SweepDefaults = Field(default_factory=SweepDefaults)
    output_dir: Path = Path("experiment")
    measured_grids: list[MeasuredGrid] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_scene(self) -> Self:
        names = [room.name for room in self.rooms]
        if len(set(names)) != len(names):
            raise ValueError(f"Room names must be unique: {names}")
        if self.scenario == Scenario.SINGLE_ROOM_SOURCE_MOVE and len(self.sources) < 2:
            raise ValueError("single_room_source_move needs a pretraining and an adaptation source")
        if self.scenario == Scenario.MULTI_ROOM and len(self.rooms) < 2:
            raise ValueError("multi_room needs at least two rooms")
        for mask in (self.pretrain_mask, self.adapt_mask):
            if mask.count > self.array.num_mics:
                raise ValueError(
                    f"Mask count {mask.count} exceeds the array's {self.array.num_mics} mics"
                )
        mics = self.array.mic_positions()
        for room in self.rooms:
            for m, position in enumerate(mics):
                if not room.contains(position):
                    raise GeometryError(f"Microphone {m} lies outside room {room.name!r}")
            for source in self.sources:
                if not room.contains(source.position_m):
                    raise GeometryError(
                        f"Source {source.display_name} lies outside room {room.name!r}"
                    )
        for grid in self.measured_grids:
            if grid.room not in names:
                raise ValueError(f"Measured grid refers to unknown room {grid.room!r}")
            if grid.source >= len(self.sources):
                raise ValueError(f"Measured grid refers to unknown source {grid.source}")
            if (grid.layout.N, grid.layout.M) != (self.rir_length, self.array.num_mics):
                raise ValueError(
                    f"Measured grid {grid.path} is {grid.layout.N}x{grid.layout.M}, "
                    f"scene expects {self.rir_length}x{self.array.num_mics}"
                )
        return self

    @property
    def grid_dims(self) -> tuple[int, int]:
        return (self.rir_length, self.array.num_mics)

    def room(self, name: str | None = None) -> RoomSpec:
        """Room by name; the first room when ``name`` is None."""
        if name is None:
            return self.rooms[0]
        for room in self.rooms:
            if room.name == name:
                return room
        known = [r.name for r in self.rooms]
        raise InvalidArgumentError(f"Unknown room {name!r}; spec has {known}")

    def measured(self, room_name: str, source_index: int) -> MeasuredGrid | None:
        for grid in self.measured_grids:
            if grid.room == room_name and grid.source == source_index:
                return grid
        return None

    def with_seed(self, seed: int) -> "ExperimentSpec":
        """Copy with network, noise and training seeds replaced."""
        return self.model_copy(
            update={
                "network": self.network.model_copy(update={"seed": seed}),
                "noise": self.noise.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
            }
        )

    def with_output_dir(self, output_dir: Path) -> "ExperimentSpec":
        return self.model_copy(update={"output_dir": Path(output_dir)})


def load_spec(path: Path) -> ExperimentSpec:
    """
    Load and validate a scene file.

    Relative measured-grid paths are resolved against the scene file's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    for grid in data.get("measured_grids", []) or []:
        grid_path = Path(grid["path"])
        if not grid_path.is_absolute():
            grid["path"] = str((path.parent / grid_path).resolve())
        if not Path(grid["path"]).exists():
            raise FileNotFoundError(f"Measured grid not found: {grid['path']}")
    return ExperimentSpec.model_validate(data)
