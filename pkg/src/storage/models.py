"""Header and manifest models of the binary file formats."""

from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from src.network.dp_network import NetworkConfig

FORMAT_VERSION = 1
PAYLOAD_DTYPE = "<f4"
FLOAT_BYTES = 4


class FileKind(str, Enum):
    """Content type announced in a file header."""

    GRID = "grid"
    ADAPTERS = "adapters"
    CHECKPOINT = "checkpoint"


class FileHeader(BaseModel):
    """Fields shared by every header."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    kind: FileKind
    dtype: Literal["<f4"] = PAYLOAD_DTYPE


class GridHeader(FileHeader):
    """
    Header of a grid file.

    The payload holds N * M little-endian float32 values, channel-major: all N
    samples of channel 0, then channel 1, and so on.
    """

    kind: Literal["grid"] = "grid"
    sample_rate_hz: float = Field(gt=0)
    N: int = Field(ge=1)
    M: int = Field(ge=1)
    channel_spacing_m: float = Field(gt=0)
    label: str = ""

    @property
    def payload_bytes(self) -> int:
        return FLOAT_BYTES * self.N * self.M


class TensorEntry(BaseModel):
    """Location of one tensor inside a payload."""

    model_config = ConfigDict(extra="forbid")

    name: str
    shape: list[int]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)

    @property
    def expected_nbytes(self) -> int:
        count = 1
        for dim in self.shape:
            count *= dim
        return FLOAT_BYTES * count


class AdapterLayerEntry(BaseModel):
    """One adapted layer: its base weight shape and where its A and B tensors live."""

    model_config = ConfigDict(extra="forbid")

    name: str
    layer_shape: tuple[int, int, int, int]
    A: TensorEntry
    B: TensorEntry


class AdapterHeader(FileHeader):
    """Manifest of an adapter bundle file (A then B per layer, in manifest order)."""

    kind: Literal["adapters"] = "adapters"
    rank: int = Field(ge=1)
    alpha: float = Field(gt=0)
    base_model_fingerprint: str | None = None
    seed: int = 0
    layers: list[AdapterLayerEntry] = Field(default_factory=list)


class NoiseRecord(BaseModel):
    """How the fixed network input was drawn, so it can be re-sampled exactly."""

    model_config = ConfigDict(extra="forbid")

    variance: float = Field(gt=0)
    seed: int
    shape: tuple[int, int, int]  # (N, M, C)


class CheckpointHeader(FileHeader):
    """Manifest of a network checkpoint: config echo plus ordered parameter entries."""

    kind: Literal["checkpoint"] = "checkpoint"
    network: NetworkConfig
    fingerprint: str
    parameters: list[TensorEntry]
    noise: NoiseRecord | None = None
    output_scale: float = Field(default=1.0, gt=0)
    metadata: dict[str, Any] = Field(default_factory=dict)


class ExternalLayout(BaseModel):
    """Byte layout of an externally measured RIR grid."""

    model_config = ConfigDict(frozen=True)

    dtype: Literal["f32", "f64"] = "f32"
    endianness: Literal["little", "big"] = "little"
    ordering: Literal["channel_major", "time_major"] = "channel_major"
    N: int = Field(ge=1)
    M: int = Field(ge=1)
    sample_rate_hz: float = Field(gt=0)
    channel_spacing_m: float = Field(default=0.03, gt=0)
    header_bytes: int = Field(default=0, ge=0)
    label: str = ""

    @property
    def numpy_dtype(self) -> str:
        order = "<" if self.endianness == "little" else ">"
        return f"{order}{'f4' if self.dtype == 'f32' else 'f8'}"

    @property
    def payload_bytes(self) -> int:
        return (4 if self.dtype == "f32" else 8) * self.N * self.M
