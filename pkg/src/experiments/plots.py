"""Static, byte-reproducible plot files."""

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.utils.config import PlotsConfig  # noqa: E402
from src.utils.files import atomic_write_bytes  # noqa: E402

_STABLE_RC = {
    "svg.hashsalt": "sfr",
    "svg.fonttype": "path",
    "pdf.compression": 0,
    "font.family": "DejaVu Sans",
}
_NO_DATE = {"svg": {"Date": None}, "pdf": {"CreationDate": None, "ModDate": None}}


def _save(fig: plt.Figure, path: Path, plots: PlotsConfig) -> Path:
    path = Path(path).with_suffix(f".{plots.format}")
    buffer = io.BytesIO()
    fig.savefig(buffer, format=plots.format, dpi=plots.dpi, metadata=_NO_DATE.get(plots.format))
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())
    return path


def plot_trajectories(
    frames: dict[str, pd.DataFrame],
    path: Path,
    plots: PlotsConfig,
    column: str = "full_nmse_db",
    title: str = "NMSE over iterations",
) -> Path:
    """One line per run of ``column`` against iteration."""
    with plt.rc_context(_STABLE_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label, frame in frames.items():
            values = frame[column]
            if values.isna().all():
                values = frame["observed_nmse_db"]
            ax.plot(frame["iteration"], values, label=label, linewidth=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("NMSE [dB]")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        if frames:
            ax.legend(fontsize="small")
        fig.tight_layout()
        return _save(fig, path, plots)


def plot_rank_sweep(frame: pd.DataFrame, path: Path, plots: PlotsConfig) -> Path:
    """NMSE against iteration for every adapter rank."""
    frames = {
        f"r={rank}": group.rename(columns={"nmse_db": "full_nmse_db"})
        for rank, group in frame.groupby("rank", sort=True)
    }
    return plot_trajectories(frames, path, plots, title="LoRA NMSE by rank")


def plot_mic_sweep(frame: pd.DataFrame, path: Path, plots: PlotsConfig) -> Path:
    """Grouped bars: NMSE per mode for each number of observed microphones."""
    counts = sorted(frame["M_tilde"].unique())
    modes = list(dict.fromkeys(frame["mode"]))
    width = 0.8 / max(len(modes), 1)
    positions = np.arange(len(counts))
    with plt.rc_context(_STABLE_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for i, mode in enumerate(modes):
            subset = frame[frame["mode"] == mode].set_index("M_tilde")
            values = [
                float(subset.loc[c, "nmse_db"]) if c in subset.index else np.nan for c in counts
            ]
            ax.bar(positions + (i - (len(modes) - 1) / 2) * width, values, width, label=mode)
        ax.set_xticks(positions, [str(c) for c in counts])
        ax.set_xlabel("observed microphones")
        ax.set_ylabel("NMSE [dB]")
        ax.grid(True, axis="y", alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        return _save(fig, path, plots)


def plot_cross_room(frame: pd.DataFrame, path: Path, plots: PlotsConfig) -> Path:
    """Bars per (pretraining room, target room, count) cell, one bar per mode."""
    keys = list(
        dict.fromkeys(
            zip(frame["pretrain_room"], frame["target_room"], frame["M_tilde"], strict=True)
        )
    )
    modes = list(dict.fromkeys(frame["mode"]))
    width = 0.8 / max(len(modes), 1)
    positions = np.arange(len(keys))
    indexed = frame.set_index(["pretrain_room", "target_room", "M_tilde", "mode"])["nmse_db"]
    with plt.rc_context(_STABLE_RC):
        fig, ax = plt.subplots(figsize=(max(6.4, 0.6 * len(keys)), 4.0))
        for i, mode in enumerate(modes):
            values = [float(indexed.get((*key, mode), np.nan)) for key in keys]
            ax.bar(positions + (i - (len(modes) - 1) / 2) * width, values, width, label=mode)
        ax.set_xticks(
            positions, [f"{p}->{t}\n{m}" for p, t, m in keys], rotation=45, fontsize="x-small"
        )
        ax.set_ylabel("NMSE [dB]")
        ax.grid(True, axis="y", alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        return _save(fig, path, plots)
