"""RIR grids, the sampling operator, the convolutional signal model and NMSE."""

from dataclasses import dataclass, replace

import numpy as np

from src.core.errors import (
    DegenerateReferenceError,
    IncompatibleSignalError,
    InvalidArgumentError,
    MaskMismatchError,
    ShapeMismatchError,
)

# Lower bound reported by the NMSE functions; keeps exact equality finite.
NMSE_FLOOR_DB = -300.0


def _readonly(array: np.ndarray) -> np.ndarray:
    frozen = np.array(array, copy=True)
    frozen.setflags(write=False)
    return frozen


@dataclass(frozen=True)
class ImpulseResponseGrid:
    """
    N x M matrix of room impulse responses.

    Column m holds the N samples recorded by microphone m. The samples array is
    copied on construction and stored read-only.
    """

    samples: np.ndarray
    sample_rate_hz: float
    channel_spacing_m: float
    origin_label: str = ""

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ShapeMismatchError(f"Grid samples must be 2-D, got shape {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ShapeMismatchError(f"Grid must be at least 1x1, got {samples.shape}")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("Grid samples must be finite")
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError(f"sample_rate_hz must be positive: {self.sample_rate_hz}")
        if not self.channel_spacing_m > 0:
            raise InvalidArgumentError(
                f"channel_spacing_m must be positive: {self.channel_spacing_m}"
            )
        object.__setattr__(self, "samples", _readonly(samples))

    @property
    def num_samples(self) -> int:
        """Samples per channel (N)."""
        return int(self.samples.shape[0])

    @property
    def num_channels(self) -> int:
        """Number of microphones (M)."""
        return int(self.samples.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_samples, self.num_channels)

    def with_samples(self, samples: np.ndarray) -> "ImpulseResponseGrid":
        """Return a grid with the same metadata and new samples."""
        return replace(self, samples=samples)

    def channel(self, index: int) -> np.ndarray:
        return self.samples[:, index]


@dataclass(frozen=True)
class SamplingMask:
    """Ordered subset of observed channel indices (the sampling operator S)."""

    indices: tuple[int, ...]
    total_channels: int

    def __post_init__(self) -> None:
        indices = tuple(int(i) for i in self.indices)
        if self.total_channels < 1:
            raise InvalidArgumentError(f"total_channels must be >= 1: {self.total_channels}")
        if not 1 <= len(indices) <= self.total_channels:
            raise InvalidArgumentError(
                f"Mask must select between 1 and {self.total_channels} channels, "
                f"got {len(indices)}"
            )
        if any(b <= a for a, b in zip(indices, indices[1:], strict=False)):
            raise InvalidArgumentError("Mask indices must be strictly increasing")
        if indices[0] < 0 or indices[-1] >= self.total_channels:
            raise MaskMismatchError(
                f"Mask indices must lie in [0, {self.total_channels}), got {indices}"
            )
        object.__setattr__(self, "indices", indices)

    @classmethod
    def full(cls, total_channels: int) -> "SamplingMask":
        return cls(tuple(range(total_channels)), total_channels)

    @property
    def size(self) -> int:
        """Number of observed channels (M tilde)."""
        return len(self.indices)

    @property
    def is_full(self) -> bool:
        return self.size == self.total_channels

    def complement(self) -> tuple[int, ...]:
        """Indices of the unobserved channels (possibly empty)."""
        observed = set(self.indices)
        return tuple(i for i in range(self.total_channels) if i not in observed)


@dataclass(frozen=True)
class SourceSignal:
    """Signal emitted by the source, s(t)."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ShapeMismatchError(f"Source signal must be a non-empty vector: {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("Source signal must be finite")
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError(f"sample_rate_hz must be positive: {self.sample_rate_hz}")
        object.__setattr__(self, "samples", _readonly(samples))

    def __len__(self) -> int:
        return int(self.samples.size)


def apply_sampling(grid: ImpulseResponseGrid, mask: SamplingMask) -> ImpulseResponseGrid:
    """Select the observed columns of a grid; metadata is preserved."""
    if mask.total_channels != grid.num_channels:
        raise MaskMismatchError(
            f"Mask built for {mask.total_channels} channels, grid has {grid.num_channels}"
        )
    return grid.with_samples(grid.samples[:, list(mask.indices)])


def make_random_mask(M: int, M_tilde: int, seed: int) -> SamplingMask:
    """
    Draw M_tilde of M channels uniformly without replacement.

    The draw is ``numpy.random.default_rng(seed).choice(M, M_tilde, replace=False)``
    sorted ascending, so it can be reproduced outside this package.
    """
    if M < 1:
        raise InvalidArgumentError(f"M must be >= 1, got {M}")
    if not 1 <= M_tilde <= M:
        raise InvalidArgumentError(f"M_tilde must lie in [1, {M}], got {M_tilde}")
    rng = np.random.default_rng(seed)
    drawn = rng.choice(M, size=M_tilde, replace=False)
    return SamplingMask(tuple(sorted(int(i) for i in drawn)), M)


def make_uniform_mask(M: int, M_tilde: int) -> SamplingMask:
    """Evenly spaced channel subset including both array ends (when M_tilde > 1)."""
    if M < 1:
        raise InvalidArgumentError(f"M must be >= 1, got {M}")
    if not 1 <= M_tilde <= M:
        raise InvalidArgumentError(f"M_tilde must lie in [1, {M}], got {M_tilde}")
    # Spacing is >= 1, so rounding half up never merges two positions.
    positions = np.floor(np.linspace(0.0, M - 1, M_tilde) + 0.5).astype(int)
    return SamplingMask(tuple(int(i) for i in positions), M)


def render_mic_signal(
    rir: np.ndarray,
    source: SourceSignal,
    noise_std: float = 0.0,
    seed: int = 0,
    *,
    sample_rate_hz: float | None = None,
) -> np.ndarray:
    """
    Microphone signal p = h * s + e.

    Args:
        rir: Impulse response h of length N
        source: Source signal s of length L
        noise_std: Standard deviation of the i.i.d. Gaussian sensor noise e
        seed: Seed of the noise generator
        sample_rate_hz: Sample rate of ``rir``; checked against the source when given

    Returns:
        Full linear convolution of length N + L - 1 plus noise
    """
    if sample_rate_hz is not None and sample_rate_hz != source.sample_rate_hz:
        raise IncompatibleSignalError(
            f"RIR sampled at {sample_rate_hz} Hz, source at {source.sample_rate_hz} Hz"
        )
    if noise_std < 0:
        raise InvalidArgumentError(f"noise_std must be nonnegative, got {noise_std}")
    h = np.asarray(rir, dtype=np.float64)
    if h.ndim != 1 or h.size < 1:
        raise ShapeMismatchError(f"RIR must be a non-empty vector, got shape {h.shape}")

    signal = np.convolve(h, source.samples, mode="full")
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        signal = signal + rng.normal(0.0, noise_std, size=signal.shape)
    return signal


def render_grid_signals(
    grid: ImpulseResponseGrid,
    source: SourceSignal,
    noise_std: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Apply the signal model to every channel; returns an (N + L - 1) x M array."""
    columns = [
        render_mic_signal(
            grid.channel(m),
            source,
            noise_std,
            seed + m,
            sample_rate_hz=grid.sample_rate_hz,
        )
        for m in range(grid.num_channels)
    ]
    return np.stack(columns, axis=1)


def channel_error_ratios(
    estimate: ImpulseResponseGrid, reference: ImpulseResponseGrid
) -> np.ndarray:
    """Per-channel ||h_hat_m - h_m||^2 / ||h_m||^2 in the linear domain."""
    if estimate.shape != reference.shape:
        raise ShapeMismatchError(
            f"Estimate shape {estimate.shape} differs from reference shape {reference.shape}"
        )
    ref = reference.samples.astype(np.float64)
    est = estimate.samples.astype(np.float64)
    energy = np.sum(ref * ref, axis=0)
    if np.any(energy == 0):
        silent = [int(i) for i in np.flatnonzero(energy == 0)]
        raise DegenerateReferenceError(f"Reference channels with zero energy: {silent}")
    residual = est - ref
    return np.sum(residual * residual, axis=0) / energy


def _to_db(linear: np.ndarray | float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(10.0 * np.log10(linear), NMSE_FLOOR_DB)


def nmse(estimate: ImpulseResponseGrid, reference: ImpulseResponseGrid) -> float:
    """Channel-averaged normalized squared error in dB, floored at -300 dB."""
    ratios = channel_error_ratios(estimate, reference)
    return float(_to_db(np.mean(ratios)))


def nmse_per_channel(
    estimate: ImpulseResponseGrid, reference: ImpulseResponseGrid
) -> np.ndarray:
    """Per-channel NMSE in dB; the linear mean of its ratios reproduces ``nmse``."""
    return _to_db(channel_error_ratios(estimate, reference))
