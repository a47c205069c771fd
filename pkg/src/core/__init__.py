"""Signal model, metrics, errors and the training loop."""

from src.core.signal import (
    ImpulseResponseGrid,
    SamplingMask,
    SourceSignal,
    apply_sampling,
    make_random_mask,
    make_uniform_mask,
    nmse,
    nmse_per_channel,
    render_mic_signal,
)

__all__ = [
    "ImpulseResponseGrid",
    "SamplingMask",
    "SourceSignal",
    "apply_sampling",
    "make_random_mask",
    "make_uniform_mask",
    "nmse",
    "nmse_per_channel",
    "render_mic_signal",
]
