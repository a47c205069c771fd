"""Reading and writing grid, adapter and checkpoint files."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from src.core.errors import (
    CorruptFileError,
    IncompatibleAdapterError,
    MissingFingerprintError,
    NonFiniteDataError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from src.core.signal import ImpulseResponseGrid
from src.network.dp_network import (
    DpNetwork,
    NetworkConfig,
    NoiseInput,
    build_network,
    network_fingerprint,
)
from src.network.lora import AdapterBundle, LoraAdapter
from src.storage.models import (
    FORMAT_VERSION,
    PAYLOAD_DTYPE,
    AdapterHeader,
    AdapterLayerEntry,
    CheckpointHeader,
    ExternalLayout,
    FileKind,
    GridHeader,
    NoiseRecord,
    TensorEntry,
)
from src.utils.files import atomic_write_bytes

logger = logging.getLogger(__name__)

HeaderT = TypeVar("HeaderT", bound=BaseModel)


def _encode(header: BaseModel, payload: bytes) -> bytes:
    line = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return line.encode("utf-8") + b"\n" + payload


def _split(raw: bytes, path: Path) -> tuple[dict, bytes]:
    newline = raw.find(b"\n")
    if newline < 0:
        raise CorruptFileError(f"{path}: missing header line")
    try:
        data = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable header: {e}") from e
    if not isinstance(data, dict):
        raise CorruptFileError(f"{path}: header is not a JSON object")
    return data, raw[newline + 1 :]


def _parse_header(data: dict, model: type[HeaderT], kind: FileKind, path: Path) -> HeaderT:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format_version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    if data.get("kind") != kind.value:
        raise CorruptFileError(f"{path}: expected a {kind.value} file, got {data.get('kind')!r}")
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise CorruptFileError(f"{path}: invalid header: {e}") from e


def _read(path: Path, model: type[HeaderT], kind: FileKind) -> tuple[HeaderT, bytes]:
    path = Path(path)
    data, payload = _split(path.read_bytes(), path)
    return _parse_header(data, model, kind, path), payload


def _check_length(expected: int, payload: bytes, path: Path) -> None:
    if len(payload) < expected:
        raise TruncatedPayloadError(expected, len(payload), path)
    if len(payload) > expected:
        raise CorruptFileError(
            f"{path}: payload holds {len(payload)} bytes, header announces {expected}"
        )


def _floats(payload: bytes, dtype: str = PAYLOAD_DTYPE, path: Path | None = None) -> np.ndarray:
    values = np.frombuffer(payload, dtype=dtype)
    if not np.all(np.isfinite(values)):
        raise NonFiniteDataError(f"{path}: payload contains NaN or infinite values")
    return values


def _tensor_bytes(tensor: torch.Tensor | np.ndarray) -> bytes:
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().numpy()
    return np.ascontiguousarray(tensor, dtype=PAYLOAD_DTYPE).tobytes()


def write_grid(path: Path, grid: ImpulseResponseGrid) -> None:
    """
    Write a grid file.

    Samples are stored as little-endian float32; wider grids are rounded to nearest.
    """
    header = GridHeader(
        sample_rate_hz=grid.sample_rate_hz,
        N=grid.num_samples,
        M=grid.num_channels,
        channel_spacing_m=grid.channel_spacing_m,
        label=grid.origin_label,
    )
    # The transposed view serializes channel after channel.
    payload = np.asarray(grid.samples, dtype=PAYLOAD_DTYPE).T.tobytes()
    atomic_write_bytes(Path(path), _encode(header, payload))
    logger.debug(f"Wrote {grid.num_samples}x{grid.num_channels} grid to {path}")


def read_grid(path: Path) -> ImpulseResponseGrid:
    """
    Read a grid file written by ``write_grid``.

    Raises:
        VersionMismatchError: Unsupported format version
        TruncatedPayloadError: Fewer payload bytes than 4 * N * M
        CorruptFileError: Malformed header or excess payload
        NonFiniteDataError: NaN or infinite samples
    """
    path = Path(path)
    header, payload = _read(path, GridHeader, FileKind.GRID)
    _check_length(header.payload_bytes, payload, path)
    values = _floats(payload, path=path)
    samples = values.reshape(header.M, header.N).T.astype(np.float32)
    return ImpulseResponseGrid(
        samples=samples,
        sample_rate_hz=header.sample_rate_hz,
        channel_spacing_m=header.channel_spacing_m,
        origin_label=header.label,
    )


def write_adapters(path: Path, bundle: AdapterBundle) -> None:
    """Write an adapter bundle: manifest line, then A and B of each layer in order."""
    layers = []
    chunks = []
    offset = 0
    for name, adapter in bundle.adapters.items():
        entries = {}
        for key, tensor in (("A", adapter.A), ("B", adapter.B)):
            data = _tensor_bytes(tensor)
            entries[key] = TensorEntry(
                name=f"{name}.{key}", shape=list(tensor.shape), offset=offset, nbytes=len(data)
            )
            chunks.append(data)
            offset += len(data)
        layers.append(AdapterLayerEntry(name=name, layer_shape=adapter.layer_shape, **entries))

    header = AdapterHeader(
        rank=bundle.rank,
        alpha=bundle.alpha,
        base_model_fingerprint=bundle.base_model_fingerprint,
        seed=bundle.created_with_seed,
        layers=layers,
    )
    atomic_write_bytes(Path(path), _encode(header, b"".join(chunks)))
    logger.debug(f"Wrote {len(layers)} adapters (rank {bundle.rank}) to {path}")


def _check_layout(entries: list[TensorEntry], payload_size: int, path: Path) -> None:
    """Entries must tile the payload exactly: no overlaps, no gaps, no excess."""
    for entry in entries:
        if entry.nbytes != entry.expected_nbytes:
            raise CorruptFileError(
                f"{path}: {entry.name} has shape {entry.shape} "
                f"({entry.expected_nbytes} bytes) but spans {entry.nbytes} bytes"
            )
    cursor = 0
    for entry in sorted(entries, key=lambda e: (e.offset, e.nbytes)):
        if entry.offset < cursor:
            raise CorruptFileError(f"{path}: {entry.name} overlaps the previous tensor")
        if entry.offset > cursor:
            raise CorruptFileError(f"{path}: gap before {entry.name} at byte {cursor}")
        cursor = entry.offset + entry.nbytes
    if payload_size < cursor:
        raise TruncatedPayloadError(cursor, payload_size, path)
    if payload_size > cursor:
        raise CorruptFileError(f"{path}: {payload_size - cursor} trailing payload bytes")


def _slice(payload: bytes, entry: TensorEntry, path: Path) -> torch.Tensor:
    values = _floats(payload[entry.offset : entry.offset + entry.nbytes], path=path)
    return torch.from_numpy(values.astype(np.float32).reshape(entry.shape))


def read_adapters(path: Path) -> AdapterBundle:
    """
    Read an adapter bundle file.

    Raises:
        MissingFingerprintError: The manifest names no base model
        CorruptFileError: Overlapping, gapped or mis-sized tensor entries
    """
    path = Path(path)
    header, payload = _read(path, AdapterHeader, FileKind.ADAPTERS)
    if not header.base_model_fingerprint:
        raise MissingFingerprintError(f"{path}: adapter file has no base_model_fingerprint")

    entries = [e for layer in header.layers for e in (layer.A, layer.B)]
    _check_layout(entries, len(payload), path)

    adapters = {}
    for layer in header.layers:
        c_out, c_in, k, _ = layer.layer_shape
        if layer.A.shape != [header.rank, c_in, k] or layer.B.shape != [c_out, k, header.rank]:
            raise CorruptFileError(
                f"{path}: {layer.name} tensor shapes do not match layer shape "
                f"{layer.layer_shape} at rank {header.rank}"
            )
        adapters[layer.name] = LoraAdapter(
            A=_slice(payload, layer.A, path),
            B=_slice(payload, layer.B, path),
            alpha=header.alpha,
            rank=header.rank,
            layer_name=layer.name,
            layer_shape=layer.layer_shape,
        )
    return AdapterBundle(
        adapters=adapters,
        base_model_fingerprint=header.base_model_fingerprint,
        rank=header.rank,
        alpha=header.alpha,
        created_with_seed=header.seed,
    )


@dataclass
class Checkpoint:
    """Contents of a checkpoint file."""

    config: NetworkConfig
    fingerprint: str
    state: dict[str, torch.Tensor]
    noise: NoiseRecord | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    output_scale: float = 1.0


def write_checkpoint(
    path: Path,
    net: DpNetwork,
    noise: NoiseInput | None = None,
    metadata: dict[str, Any] | None = None,
) -> None:
    """
    Write the base parameters of ``net`` in canonical order.

    Args:
        path: Output file
        net: Network (attached adapters are not stored)
        noise: Fixed input used with this network, recorded by seed and variance
        metadata: Free-form JSON-serializable information
    """
    entries = []
    chunks = []
    offset = 0
    for name, param in net.base_named_parameters():
        data = _tensor_bytes(param)
        entries.append(
            TensorEntry(name=name, shape=list(param.shape), offset=offset, nbytes=len(data))
        )
        chunks.append(data)
        offset += len(data)

    noise_record = None
    if noise is not None:
        noise_record = NoiseRecord(
            variance=noise.variance,
            seed=noise.seed,
            shape=(noise.num_samples, noise.num_channels, noise.depth_channels),
        )
    header = CheckpointHeader(
        network=net.config,
        fingerprint=network_fingerprint(net),
        parameters=entries,
        noise=noise_record,
        output_scale=net.output_scale,
        metadata=metadata or {},
    )
    atomic_write_bytes(Path(path), _encode(header, b"".join(chunks)))
    logger.debug(f"Wrote checkpoint with {len(entries)} tensors to {path}")


def read_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint file without instantiating the network."""
    path = Path(path)
    header, payload = _read(path, CheckpointHeader, FileKind.CHECKPOINT)
    _check_layout(header.parameters, len(payload), path)
    state = {entry.name: _slice(payload, entry, path) for entry in header.parameters}
    return Checkpoint(
        config=header.network,
        fingerprint=header.fingerprint,
        state=state,
        noise=header.noise,
        metadata=header.metadata,
        output_scale=header.output_scale,
    )


def load_network(path: Path) -> tuple[DpNetwork, Checkpoint]:
    """
    Rebuild the network stored in a checkpoint.

    Raises:
        IncompatibleAdapterError: Stored fingerprint does not match the rebuilt architecture
        CorruptFileError: Parameter names or shapes differ from the architecture
    """
    checkpoint = read_checkpoint(path)
    net = build_network(checkpoint.config)
    if network_fingerprint(net) != checkpoint.fingerprint:
        raise IncompatibleAdapterError(
            f"{path}: stored fingerprint does not match the rebuilt network"
        )
    params = dict(net.base_named_parameters())
    if set(params) != set(checkpoint.state):
        missing = sorted(set(params) ^ set(checkpoint.state))
        raise CorruptFileError(f"{path}: parameter names differ from the architecture: {missing}")
    with torch.no_grad():
        for name, param in params.items():
            value = checkpoint.state[name]
            if value.shape != param.shape:
                raise CorruptFileError(
                    f"{path}: {name} has shape {tuple(value.shape)}, "
                    f"expected {tuple(param.shape)}"
                )
            param.copy_(value)
    net.output_scale = checkpoint.output_scale
    return net, checkpoint


def import_external(path: Path, layout: ExternalLayout) -> ImpulseResponseGrid:
    """
    Load a raw measured grid and normalize it to the grid conventions.

    Args:
        path: Raw binary file
        layout: dtype, endianness, ordering and dimensions of the data

    Returns:
        Grid with float32 samples (float64 inputs rounded to nearest)

    Raises:
        TruncatedPayloadError: The file holds fewer bytes than the layout needs
        CorruptFileError: The file holds more bytes than the layout needs
    """
    path = Path(path)
    raw = path.read_bytes()[layout.header_bytes :]
    _check_length(layout.payload_bytes, raw, path)
    values = _floats(raw, dtype=layout.numpy_dtype, path=path)
    if layout.ordering == "channel_major":
        samples = values.reshape(layout.M, layout.N).T
    else:
        samples = values.reshape(layout.N, layout.M)
    logger.info(f"Imported {layout.N}x{layout.M} grid from {path}")
    return ImpulseResponseGrid(
        samples=samples.astype(np.float32),
        sample_rate_hz=layout.sample_rate_hz,
        channel_spacing_m=layout.channel_spacing_m,
        origin_label=layout.label or path.stem,
    )
