"""End-to-end tests of the experiment commands on the smoke scenes."""

import json
import logging
import math

import pandas as pd
import pytest

from src.core.errors import InvalidArgumentError
from src.core.trainer import TRAJECTORY_COLUMNS, TrainMode
from src.experiments.commands import (
    ADAPTERS_FILE,
    CHECKPOINT_FILE,
    CROSS_ROOM_COLUMNS,
    ESTIMATE_FILE,
    MIC_SWEEP_COLUMNS,
    PRETRAINING_COLUMNS,
    RANK_SWEEP_COLUMNS,
    REFERENCE_FILE,
    SUMMARY_FILE,
    TRAJECTORY_FILE,
    adapt,
    cmd_cross_room,
    cmd_pretrain,
    cmd_sweep_mics,
    cmd_sweep_rank,
    pretrain,
    resolve_mode,
)
from src.storage.files import read_adapters, read_checkpoint, read_grid


@pytest.fixture
def checkpoint(smoke_spec, config, tmp_path):
    result = pretrain(smoke_spec, out_dir=tmp_path / "pretrained", config=config)
    return result.out_dir / CHECKPOINT_FILE


def test_resolve_mode():
    assert resolve_mode("ft") == TrainMode.FULL_FINETUNE
    assert resolve_mode(TrainMode.LORA) == TrainMode.LORA
    with pytest.raises(InvalidArgumentError):
        resolve_mode("partial")


class TestPretrain:
    def test_writes_run_files(self, smoke_spec, config):
        result = cmd_pretrain(smoke_spec, config)
        out = smoke_spec.output_dir
        for name in (CHECKPOINT_FILE, REFERENCE_FILE, ESTIMATE_FILE, TRAJECTORY_FILE, SUMMARY_FILE):
            assert (out / name).exists(), name
        assert (out / "trajectory.svg").exists()

        trajectory = pd.read_csv(out / TRAJECTORY_FILE)
        assert list(trajectory.columns) == TRAJECTORY_COLUMNS
        assert len(trajectory) == 5
        assert read_grid(out / ESTIMATE_FILE).shape == (64, 8)

        summary = json.loads((out / SUMMARY_FILE).read_text(encoding="utf-8"))
        assert summary["command"] == "pretrain"
        assert summary["mode"] == "scratch"
        assert summary["M_tilde"] == 8
        assert summary["unobserved_nmse_db"] is None
        assert summary["trainable_fraction"] == 1.0
        assert result.summary.room == "box"
        checkpoint = read_checkpoint(out / CHECKPOINT_FILE)
        assert checkpoint.metadata["source"] == 0
        assert checkpoint.metadata["scale"] == result.summary.scale
        assert checkpoint.output_scale == result.summary.scale

    def test_trajectory_is_reproducible(self, smoke_spec, config, tmp_path):
        a = pretrain(smoke_spec, out_dir=tmp_path / "a", config=config)
        b = pretrain(smoke_spec, out_dir=tmp_path / "b", config=config)
        assert (a.out_dir / TRAJECTORY_FILE).read_bytes() == (
            b.out_dir / TRAJECTORY_FILE
        ).read_bytes()
        assert (a.out_dir / CHECKPOINT_FILE).read_bytes() == (
            b.out_dir / CHECKPOINT_FILE
        ).read_bytes()


class TestAdapt:
    def test_lora_writes_matching_adapters(self, smoke_spec, config, checkpoint, tmp_path):
        before = checkpoint.read_bytes()
        result = adapt(smoke_spec, checkpoint, "lora", out_dir=tmp_path / "lora", config=config)

        bundle = read_adapters(result.out_dir / ADAPTERS_FILE)
        assert bundle.base_model_fingerprint == read_checkpoint(checkpoint).fingerprint
        assert bundle.rank == smoke_spec.sweeps.lora_rank
        assert checkpoint.read_bytes() == before

        summary = result.summary
        assert summary.mode == TrainMode.LORA
        assert summary.rank == 2
        assert summary.source == 1
        assert summary.M_tilde == 4
        assert 0 < summary.trainable_fraction < 1
        assert len(result.trajectory) == 5

    def test_finetune_trains_everything(self, smoke_spec, config, checkpoint, tmp_path):
        result = adapt(smoke_spec, checkpoint, "ft", out_dir=tmp_path / "ft", config=config)
        assert result.summary.trainable_fraction == 1.0
        assert result.summary.rank is None
        assert not (result.out_dir / ADAPTERS_FILE).exists()

    def test_lora_rejects_rank_zero(self, smoke_spec, config, checkpoint, tmp_path):
        with pytest.raises(InvalidArgumentError):
            adapt(smoke_spec, checkpoint, "lora", rank=0, out_dir=tmp_path / "r0", config=config)

    def test_finetune_needs_checkpoint(self, smoke_spec, config):
        with pytest.raises(InvalidArgumentError):
            adapt(smoke_spec, None, "ft", config=config)

    def test_scratch_ignores_checkpoint(self, smoke_spec, config, checkpoint, tmp_path, caplog):
        with caplog.at_level(logging.WARNING, logger="src.experiments.commands"):
            result = adapt(
                smoke_spec, checkpoint, "scratch", out_dir=tmp_path / "scratch", config=config
            )
        assert "ignores the checkpoint" in caplog.text
        assert result.summary.mode == TrainMode.SCRATCH


class TestSweeps:
    def test_rank_sweep(self, smoke_spec, config, checkpoint):
        frame = cmd_sweep_rank(smoke_spec, checkpoint=checkpoint, config=config)
        assert list(frame.columns) == RANK_SWEEP_COLUMNS
        assert len(frame) == 2 * 5
        params = frame.groupby("rank")["trainable_params"].first()
        assert params.loc[1] < params.loc[2]

        out = smoke_spec.output_dir
        written = pd.read_csv(out / "rank_sweep.csv")
        assert len(written) == 10
        assert (out / "rank_sweep.svg").exists()
        summary = json.loads((out / "rank_sweep_summary.json").read_text(encoding="utf-8"))
        assert [row["rank"] for row in summary] == [1, 2]

    def test_rank_sweep_rejects_bad_ranks(self, smoke_spec, config, checkpoint):
        with pytest.raises(InvalidArgumentError):
            cmd_sweep_rank(smoke_spec, ranks=[0, 2], checkpoint=checkpoint, config=config)

    def test_rank_sweep_rejects_empty_list(self, smoke_spec, config):
        with pytest.raises(InvalidArgumentError):
            cmd_sweep_rank(smoke_spec, ranks=[], config=config)
        assert not (smoke_spec.output_dir / "pretrain").exists()

    def test_mic_sweep_pretrains_when_needed(self, smoke_spec, config):
        frame = cmd_sweep_mics(smoke_spec, config=config)
        assert list(frame.columns) == MIC_SWEEP_COLUMNS
        assert len(frame) == 6
        assert list(frame["mode"]) == ["scratch", "ft", "lora"] * 2
        assert (smoke_spec.output_dir / "pretrain" / CHECKPOINT_FILE).exists()
        assert (smoke_spec.output_dir / "mic_sweep.csv").exists()

    def test_mic_sweep_full_mask(self, smoke_spec, config, checkpoint):
        frame = cmd_sweep_mics(smoke_spec, counts=[8], checkpoint=checkpoint, config=config)
        assert len(frame) == 3
        assert frame["unobserved_nmse_db"].isna().all()
        pd.testing.assert_series_equal(
            frame["observed_nmse_db"], frame["nmse_db"], check_names=False, rtol=1e-9
        )

    def test_mic_sweep_rejects_empty_list(self, smoke_spec, config):
        with pytest.raises(InvalidArgumentError):
            cmd_sweep_mics(smoke_spec, counts=[], config=config)
        assert not (smoke_spec.output_dir / "pretrain").exists()

    def test_mic_sweep_rejects_large_counts(self, smoke_spec, config, checkpoint):
        with pytest.raises(InvalidArgumentError):
            cmd_sweep_mics(smoke_spec, counts=[9], checkpoint=checkpoint, config=config)


class TestCrossRoom:
    def test_matrix(self, smoke_multi_room_spec, config):
        frame = cmd_cross_room(smoke_multi_room_spec, config=config)
        assert list(frame.columns) == CROSS_ROOM_COLUMNS
        assert len(frame) == 36
        assert all(math.isfinite(v) for v in frame["nmse_db"])
        assert not (frame["pretrain_room"] == frame["target_room"]).any()
        assert (frame["gap_to_best_db"] >= 0).all()
        assert frame.groupby(["pretrain_room", "target_room", "M_tilde"])[
            "gap_to_best_db"
        ].min().eq(0).all()

        out = smoke_multi_room_spec.output_dir
        assert len(pd.read_csv(out / "cross_room.csv")) == 36
        pretraining = pd.read_csv(out / "cross_room_pretraining.csv")
        assert list(pretraining.columns) == PRETRAINING_COLUMNS
        assert list(pretraining["pretrain_room"]) == ["balder", "munin", "freja"]

    def test_rejects_empty_counts(self, smoke_multi_room_spec, config):
        with pytest.raises(InvalidArgumentError):
            cmd_cross_room(smoke_multi_room_spec, counts=[], config=config)

    def test_needs_multi_room_spec(self, smoke_spec, config):
        with pytest.raises(InvalidArgumentError):
            cmd_cross_room(smoke_spec, config=config)
