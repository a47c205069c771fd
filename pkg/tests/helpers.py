"""Test helpers."""

from pathlib import Path

import numpy as np

from src.core.signal import ImpulseResponseGrid

ROOT = Path(__file__).parent.parent
SCENES = ROOT / "scenes"
DATA = Path(__file__).parent / "data"


def make_grid(samples: np.ndarray, label: str = "") -> ImpulseResponseGrid:
    return ImpulseResponseGrid(
        samples=samples, sample_rate_hz=8000.0, channel_spacing_m=0.03, origin_label=label
    )
