"""Tests for static plot output."""

import pandas as pd

from src.experiments.plots import (
    plot_cross_room,
    plot_mic_sweep,
    plot_rank_sweep,
    plot_trajectories,
)
from src.utils.config import PlotsConfig


def _trajectory(offset: float) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "iteration": [0, 1, 2],
            "l1_loss": [1.0, 0.5, 0.25],
            "observed_nmse_db": [-1.0 - offset, -3.0 - offset, -6.0 - offset],
            "full_nmse_db": [-0.5 - offset, -2.0 - offset, -4.0 - offset],
        }
    )


def test_trajectory_plot_is_reproducible(tmp_path):
    frames = {"scratch": _trajectory(0.0), "lora": _trajectory(1.0)}
    first = plot_trajectories(frames, tmp_path / "a" / "trajectory", PlotsConfig())
    second = plot_trajectories(frames, tmp_path / "b" / "trajectory", PlotsConfig())
    assert first.suffix == ".svg"
    assert first.read_bytes() == second.read_bytes()
    assert b"<dc:date>" not in first.read_bytes()


def test_trajectory_plot_falls_back_to_observed(tmp_path):
    frame = _trajectory(0.0)
    frame["full_nmse_db"] = float("nan")
    path = plot_trajectories({"run": frame}, tmp_path / "t", PlotsConfig())
    assert path.exists()


def test_png_format(tmp_path):
    path = plot_trajectories({"run": _trajectory(0.0)}, tmp_path / "t", PlotsConfig(format="png"))
    assert path.suffix == ".png"
    assert path.read_bytes()[:4] == b"\x89PNG"


def test_rank_sweep_plot(tmp_path):
    frame = pd.DataFrame(
        {
            "rank": [1, 1, 4, 4],
            "iteration": [0, 1, 0, 1],
            "nmse_db": [-1.0, -2.0, -1.5, -3.0],
            "trainable_params": [10, 10, 40, 40],
        }
    )
    assert plot_rank_sweep(frame, tmp_path / "ranks", PlotsConfig()).exists()


def test_mic_sweep_plot(tmp_path):
    frame = pd.DataFrame(
        {
            "M_tilde": [4, 4, 8, 8],
            "mode": ["scratch", "lora", "scratch", "lora"],
            "nmse_db": [-2.0, -4.0, -5.0, -7.0],
            "observed_nmse_db": [-9.0] * 4,
            "unobserved_nmse_db": [-1.0] * 4,
            "trainable_params": [100, 10, 100, 10],
        }
    )
    assert plot_mic_sweep(frame, tmp_path / "mics", PlotsConfig()).exists()


def test_cross_room_plot(tmp_path):
    frame = pd.DataFrame(
        {
            "pretrain_room": ["a", "a", "b", "b"],
            "target_room": ["b", "b", "a", "a"],
            "M_tilde": [3, 3, 3, 3],
            "mode": ["ft", "lora", "ft", "lora"],
            "nmse_db": [-2.0, -2.5, -3.0, -2.0],
        }
    )
    assert plot_cross_room(frame, tmp_path / "cross", PlotsConfig()).exists()
