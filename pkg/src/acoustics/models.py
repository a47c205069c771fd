"""Scene description models: rooms, microphone arrays and sources."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

Vector3 = tuple[float, float, float]


class RoomSpec(BaseModel):
    """Shoebox room with uniform wall absorption derived from its T60."""

    model_config = ConfigDict(frozen=True)

    name: str = "room"
    dimensions_m: Vector3
    t60_s: float = Field(gt=0)
    max_reflection_order: int = Field(default=8, ge=0)
    speed_of_sound_mps: float = Field(default=343.0, gt=0)

    @field_validator("dimensions_m")
    @classmethod
    def check_dimensions(cls, value: Vector3) -> Vector3:
        if any(d <= 0 for d in value):
            raise ValueError(f"Room dimensions must be positive: {value}")
        return value

    @property
    def volume_m3(self) -> float:
        lx, ly, lz = self.dimensions_m
        return lx * ly * lz

    @property
    def surface_area_m2(self) -> float:
        lx, ly, lz = self.dimensions_m
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, point: np.ndarray) -> bool:
        """Check that a point lies strictly inside the room."""
        p = np.asarray(point, dtype=np.float64)
        upper = np.asarray(self.dimensions_m, dtype=np.float64)
        return bool(np.all(p > 0) and np.all(p < upper))


class ArrayGeometry(BaseModel):
    """Uniform linear array: ``num_mics`` sensors spaced along a unit axis."""

    model_config = ConfigDict(frozen=True)

    first_mic_position_m: Vector3
    axis_unit_vector: Vector3 = (1.0, 0.0, 0.0)
    num_mics: int = Field(default=32, ge=1)
    spacing_m: float = Field(default=0.03, gt=0)

    @field_validator("axis_unit_vector")
    @classmethod
    def check_unit_axis(cls, value: Vector3) -> Vector3:
        norm = float(np.linalg.norm(value))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"Array axis must have unit norm, got |axis| = {norm}")
        return value

    def mic_positions(self) -> np.ndarray:
        """Microphone coordinates as an (M, 3) array."""
        origin = np.asarray(self.first_mic_position_m, dtype=np.float64)
        axis = np.asarray(self.axis_unit_vector, dtype=np.float64)
        offsets = np.arange(self.num_mics, dtype=np.float64) * self.spacing_m
        return origin[None, :] + offsets[:, None] * axis[None, :]

    @property
    def center_m(self) -> np.ndarray:
        return self.mic_positions().mean(axis=0)


class SourceSpec(BaseModel):
    """Omnidirectional point source."""

    model_config = ConfigDict(frozen=True)

    position_m: Vector3
    label: str = ""

    @property
    def display_name(self) -> str:
        if self.label:
            return self.label
        x, y, z = self.position_m
        return f"src({x:.2f},{y:.2f},{z:.2f})"
