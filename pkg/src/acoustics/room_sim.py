"""Image-source simulation of RIR grids in shoebox rooms."""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from src.acoustics.models import ArrayGeometry, RoomSpec, SourceSpec
from src.core.errors import GeometryError, InvalidArgumentError
from src.core.signal import ImpulseResponseGrid, SourceSignal

logger = logging.getLogger(__name__)

SABINE_CONSTANT = 0.1611
FRACTIONAL_DELAY_TAPS = 16


@dataclass(frozen=True)
class ImageSources:
    """Image positions of one source with their wall-hit counts."""

    positions: np.ndarray  # (I, 3)
    wall_hits: np.ndarray  # (I,)

    def __len__(self) -> int:
        return int(self.wall_hits.size)


def sabine_absorption(room: RoomSpec) -> float:
    """
    Uniform wall absorption from Sabine's formula.

    a = 0.1611 * V / (S * T60), clamped to at most 1.
    """
    if room.t60_s <= 0:
        raise InvalidArgumentError(f"t60_s must be positive, got {room.t60_s}")
    absorption = SABINE_CONSTANT * room.volume_m3 / (room.surface_area_m2 * room.t60_s)
    if absorption <= 0:
        raise InvalidArgumentError(f"Room {room.name!r} yields absorption {absorption} <= 0")
    return min(absorption, 1.0)


def image_sources(room: RoomSpec, source: SourceSpec) -> ImageSources:
    """
    Enumerate image sources up to the room's maximum reflection order.

    Along each axis the image coordinate is 2*n*L + (1 - 2*p)*x with wall hits
    |n - p| + |n|. Images are returned in a fixed lexicographic order.
    """
    order = room.max_reflection_order
    src = np.asarray(source.position_m, dtype=np.float64)
    dims = np.asarray(room.dimensions_m, dtype=np.float64)

    span = range(-order, order + 1)
    combos = np.array(
        [
            (*n, *p)
            for n in itertools.product(span, span, span)
            for p in itertools.product((0, 1), repeat=3)
        ],
        dtype=np.int64,
    )
    n, p = combos[:, :3], combos[:, 3:]
    hits = np.sum(np.abs(n - p) + np.abs(n), axis=1)
    keep = hits <= order
    n, p, hits = n[keep], p[keep], hits[keep]
    positions = 2.0 * n * dims[None, :] + (1.0 - 2.0 * p) * src[None, :]
    return ImageSources(positions=positions, wall_hits=hits)


def _hann(t: np.ndarray, half_width: float) -> np.ndarray:
    window = 0.5 * (1.0 + np.cos(np.pi * t / half_width))
    return np.where(np.abs(t) < half_width, window, 0.0)


def _fractional_delay_kernels(delays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Hann-windowed sinc kernels realizing fractional delays.

    Returns the sample indices (I, taps) and the kernel values. Each kernel is
    scaled so that the band-limited signal it describes equals 1 at the arrival
    instant, which puts the peak of every arrival at its amplitude.
    """
    half = FRACTIONAL_DELAY_TAPS // 2
    start = np.floor(delays).astype(np.int64) - (half - 1)
    indices = start[:, None] + np.arange(FRACTIONAL_DELAY_TAPS)[None, :]
    t = indices - delays[:, None]
    sinc = np.sinc(t)
    kernels = sinc * _hann(t, float(half))
    # sum_n k[n] sinc(delay - n) is the sinc-interpolated value at the arrival.
    kernels /= np.sum(kernels * sinc, axis=1, keepdims=True)
    return indices, kernels


def _validate_geometry(room: RoomSpec, source: SourceSpec, mics: np.ndarray) -> None:
    if not room.contains(np.asarray(source.position_m)):
        raise GeometryError(f"Source {source.position_m} lies outside room {room.name!r}")
    for m, position in enumerate(mics):
        if not room.contains(position):
            raise GeometryError(
                f"Microphone {m} at {tuple(position)} lies outside room {room.name!r}"
            )
    distances = np.linalg.norm(mics - np.asarray(source.position_m)[None, :], axis=1)
    if np.any(distances < 1e-9):
        raise GeometryError(f"Source {source.position_m} coincides with a microphone")


def simulate_rir(
    room: RoomSpec,
    source: SourceSpec,
    array: ArrayGeometry,
    sample_rate_hz: float,
    rir_length: int,
) -> ImpulseResponseGrid:
    """
    Simulate the RIR from ``source`` to every microphone of ``array``.

    Each image contributes beta**hits / (4*pi*d) at delay fs*d/c, where
    beta = sqrt(1 - a) is the pressure reflection coefficient. The result is
    truncated or zero-padded to ``rir_length`` samples.
    """
    if rir_length < 1:
        raise InvalidArgumentError(f"rir_length must be >= 1, got {rir_length}")
    if sample_rate_hz <= 0:
        raise InvalidArgumentError(f"sample_rate_hz must be positive, got {sample_rate_hz}")

    mics = array.mic_positions()
    _validate_geometry(room, source, mics)

    absorption = sabine_absorption(room)
    reflection = np.sqrt(1.0 - absorption)
    images = image_sources(room, source)
    gains = reflection ** images.wall_hits.astype(np.float64)
    logger.debug(
        f"Simulating {len(images)} images for {len(mics)} mics in {room.name} (a={absorption:.4f})"
    )

    samples = np.zeros((rir_length, len(mics)), dtype=np.float64)
    for m, mic in enumerate(mics):
        distances = np.linalg.norm(images.positions - mic[None, :], axis=1)
        amplitudes = gains / (4.0 * np.pi * distances)
        delays = sample_rate_hz * distances / room.speed_of_sound_mps
        indices, kernels = _fractional_delay_kernels(delays)
        values = amplitudes[:, None] * kernels
        valid = (indices >= 0) & (indices < rir_length)
        column = np.zeros(rir_length, dtype=np.float64)
        np.add.at(column, indices[valid], values[valid])
        samples[:, m] = column

    return ImpulseResponseGrid(
        samples=samples,
        sample_rate_hz=float(sample_rate_hz),
        channel_spacing_m=array.spacing_m,
        origin_label=f"{room.name}/{source.display_name}",
    )


def broadband_excitation(length: int, sample_rate_hz: float, seed: int) -> SourceSignal:
    """White-noise burst with zero sample mean and unit sample variance."""
    if length < 1:
        raise InvalidArgumentError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    burst = rng.standard_normal(length)
    if length > 1:
        burst = burst - burst.mean()
        burst = burst / burst.std()
    return SourceSignal(samples=burst, sample_rate_hz=sample_rate_hz)
