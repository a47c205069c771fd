"""Experiment commands: pretraining, adaptation, sweeps and the cross-room matrix."""

import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
from pydantic import BaseModel

from src.acoustics.room_sim import simulate_rir
from src.core.errors import InvalidArgumentError
from src.core.signal import ImpulseResponseGrid
from src.core.trainer import ObservationSet, TrainMode, TrainRecord, fit
from src.experiments.plots import (
    plot_cross_room,
    plot_mic_sweep,
    plot_rank_sweep,
    plot_trajectories,
)
from src.experiments.runner import apply_runtime, run_cells
from src.experiments.spec import ExperimentSpec, MaskSpec, Scenario
from src.network.dp_network import (
    DpNetwork,
    NoiseInput,
    build_network,
    count_parameters,
    pad_to_grid,
    sample_noise_input,
)
from src.network.lora import attach_adapters, detach_adapters, init_bundle
from src.storage.files import (
    Checkpoint,
    import_external,
    load_network,
    write_adapters,
    write_checkpoint,
    write_grid,
)
from src.utils.config import Config, get_config
from src.utils.files import write_csv, write_json

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.sfrc"
ADAPTERS_FILE = "adapters.sfra"
REFERENCE_FILE = "reference.sfrg"
ESTIMATE_FILE = "estimate.sfrg"
TRAJECTORY_FILE = "trajectory.csv"
SUMMARY_FILE = "summary.json"

RANK_SWEEP_COLUMNS = ["rank", "iteration", "nmse_db", "trainable_params"]
MIC_SWEEP_COLUMNS = [
    "M_tilde",
    "mode",
    "nmse_db",
    "observed_nmse_db",
    "unobserved_nmse_db",
    "trainable_params",
]
CROSS_ROOM_COLUMNS = [
    "pretrain_room",
    "target_room",
    "M_tilde",
    "mode",
    "nmse_db",
    "observed_nmse_db",
    "unobserved_nmse_db",
    "trainable_params",
    "gap_to_best_db",
    "lora_beats_ft",
]
PRETRAINING_COLUMNS = [
    "pretrain_room",
    "M_tilde",
    "nmse_db",
    "observed_nmse_db",
    "unobserved_nmse_db",
    "trainable_params",
]

MODE_NAMES = {
    "scratch": TrainMode.SCRATCH,
    "ft": TrainMode.FULL_FINETUNE,
    "full_finetune": TrainMode.FULL_FINETUNE,
    "lora": TrainMode.LORA,
}
SWEEP_MODES = (TrainMode.SCRATCH, TrainMode.FULL_FINETUNE, TrainMode.LORA)


def resolve_mode(mode: str | TrainMode) -> TrainMode:
    if isinstance(mode, TrainMode):
        return mode
    try:
        return MODE_NAMES[mode]
    except KeyError:
        raise InvalidArgumentError(f"Unknown mode {mode!r}; use ft, lora or scratch") from None


def short_mode(mode: TrainMode) -> str:
    return "ft" if mode == TrainMode.FULL_FINETUNE else mode.value


class RunSummary(BaseModel):
    """Final numbers of one fit, written next to its trajectory."""

    command: str
    mode: TrainMode
    room: str
    source: int
    mask_indices: list[int]
    M_tilde: int
    iterations: int
    rank: int | None = None
    final_loss: float
    full_nmse_db: float | None = None
    observed_nmse_db: float | None = None
    unobserved_nmse_db: float | None = None
    trainable_params: int
    base_params: int
    trainable_fraction: float
    scale: float
    wall_time_s: float


@dataclass(frozen=True)
class RunResult:
    """Outcome of a pretraining or adaptation run."""

    summary: RunSummary
    trajectory: pd.DataFrame
    out_dir: Path


def ground_truth(
    spec: ExperimentSpec, room_name: str | None = None, source_index: int = 0
) -> ImpulseResponseGrid:
    """Measured grid for (room, source) when the spec lists one, else a simulated grid."""
    room = spec.room(room_name)
    measured = spec.measured(room.name, source_index)
    if measured is not None:
        logger.info(f"Loading measured grid {measured.path} for {room.name}/{source_index}")
        return import_external(measured.path, measured.layout)
    logger.info(f"Simulating {room.name} with source {source_index}")
    return simulate_rir(
        room, spec.sources[source_index], spec.array, spec.sample_rate_hz, spec.rir_length
    )


def pretrain_target(spec: ExperimentSpec) -> tuple[str, int]:
    return spec.rooms[0].name, 0


def adapt_target(spec: ExperimentSpec) -> tuple[str, int]:
    """Room and source a model is adapted to by default."""
    if spec.scenario == Scenario.MULTI_ROOM:
        return spec.rooms[1].name, 0
    return spec.rooms[0].name, 1


def _noise_input(spec: ExperimentSpec, checkpoint: Checkpoint | None = None) -> NoiseInput:
    padded = pad_to_grid(spec.grid_dims, spec.network.depth).padded
    variance, seed = spec.noise.variance, spec.noise.seed
    if checkpoint is not None and checkpoint.noise is not None:
        record = checkpoint.noise
        if (record.variance, record.seed) != (variance, seed):
            logger.warning(
                f"Using the checkpoint's noise input (seed {record.seed}) instead of the spec's"
            )
        if tuple(record.shape[:2]) != padded:
            logger.warning(
                f"Checkpoint was trained on a {record.shape[0]}x{record.shape[1]} input, "
                f"scene needs {padded[0]}x{padded[1]}"
            )
        variance, seed = record.variance, record.seed
    return sample_noise_input(padded[0], padded[1], spec.network.input_channels, variance, seed)


def _write_run(
    out_dir: Path,
    record: TrainRecord,
    summary: RunSummary,
    config: Config,
) -> RunResult:
    trajectory = record.to_frame()
    write_csv(trajectory, out_dir / TRAJECTORY_FILE)
    write_json(out_dir / SUMMARY_FILE, summary.model_dump(mode="json"))
    write_grid(out_dir / ESTIMATE_FILE, record.estimate)
    plot_trajectories(
        {short_mode(summary.mode): trajectory},
        out_dir / "trajectory",
        config.plots,
        title=f"{summary.command}: {summary.room}/{summary.source}",
    )
    return RunResult(summary=summary, trajectory=trajectory, out_dir=out_dir)


def _summarize(
    command: str,
    record: TrainRecord,
    obs: ObservationSet,
    room: str,
    source: int,
    base_params: int,
    rank: int | None = None,
) -> RunSummary:
    metrics = record.final_metrics
    return RunSummary(
        command=command,
        mode=record.mode,
        room=room,
        source=source,
        mask_indices=list(obs.mask.indices),
        M_tilde=obs.mask.size,
        iterations=len(record.history),
        rank=rank,
        final_loss=record.final_loss,
        full_nmse_db=metrics.full_nmse_db if metrics else None,
        observed_nmse_db=metrics.observed_nmse_db if metrics else None,
        unobserved_nmse_db=metrics.unobserved_nmse_db if metrics else None,
        trainable_params=record.trainable_param_count,
        base_params=base_params,
        trainable_fraction=record.trainable_param_count / base_params,
        scale=record.scale,
        wall_time_s=record.wall_time_s,
    )


def pretrain(
    spec: ExperimentSpec,
    *,
    room: str | None = None,
    source_index: int | None = None,
    out_dir: Path | None = None,
    config: Config | None = None,
) -> RunResult:
    """
    Fit a scratch network on the pretraining mask and write its checkpoint.

    Args:
        spec: Experiment specification
        room: Pretraining room, defaults to the first room
        source_index: Pretraining source, defaults to the first source
        out_dir: Output directory, defaults to ``spec.output_dir``
        config: Runtime configuration

    Returns:
        Summary and trajectory of the run
    """
    config = config or get_config()
    default_room, default_source = pretrain_target(spec)
    room = room or default_room
    source_index = default_source if source_index is None else source_index
    out_dir = Path(out_dir or spec.output_dir)

    reference = ground_truth(spec, room, source_index)
    mask = spec.pretrain_mask.build(spec.array.num_mics)
    obs = ObservationSet.from_reference(reference, mask)

    device = config.runtime.device
    net = build_network(spec.network).to(device)
    z = _noise_input(spec)
    record = fit(net, z.to(device), obs, spec.train.with_mode(TrainMode.SCRATCH))

    write_grid(out_dir / REFERENCE_FILE, reference)
    write_checkpoint(
        out_dir / CHECKPOINT_FILE,
        net,
        z,
        metadata={
            "room": room,
            "source": source_index,
            "mask_indices": list(mask.indices),
            "iterations": spec.train.iterations,
            "scale": record.scale,
        },
    )
    summary = _summarize("pretrain", record, obs, room, source_index, count_parameters(net))
    logger.info(f"Pretrained on {room}/{source_index}, checkpoint in {out_dir}")
    return _write_run(out_dir, record, summary, config)


def adapt(
    spec: ExperimentSpec,
    checkpoint: Path | None,
    mode: str | TrainMode,
    *,
    rank: int | None = None,
    room: str | None = None,
    source_index: int | None = None,
    mask: MaskSpec | None = None,
    out_dir: Path | None = None,
    config: Config | None = None,
) -> RunResult:
    """
    Fit a network to the adaptation observations in one mode.

    Args:
        spec: Experiment specification
        checkpoint: Pretrained checkpoint (required for ft and lora, ignored for scratch)
        mode: ft, lora or scratch
        rank: Adapter rank in lora mode, defaults to the spec's sweep rank
        room: Target room
        source_index: Target source
        mask: Observation mask, defaults to ``spec.adapt_mask``
        out_dir: Output directory, defaults to ``spec.output_dir``
        config: Runtime configuration

    Returns:
        Summary and trajectory of the run

    Raises:
        InvalidArgumentError: ft or lora without a checkpoint
        IncompatibleAdapterError: Adapters do not fit the checkpoint's network
    """
    config = config or get_config()
    mode = resolve_mode(mode)
    default_room, default_source = adapt_target(spec)
    room = room or default_room
    source_index = default_source if source_index is None else source_index
    out_dir = Path(out_dir or spec.output_dir)
    device = config.runtime.device

    ckpt = None
    if mode == TrainMode.SCRATCH:
        if checkpoint is not None:
            logger.warning("Scratch mode ignores the checkpoint argument")
        net: DpNetwork = build_network(spec.network)
    else:
        if checkpoint is None:
            raise InvalidArgumentError(f"Mode {short_mode(mode)} needs a pretrained checkpoint")
        net, ckpt = load_network(Path(checkpoint))
        if ckpt.config.architecture() != spec.network.architecture():
            logger.warning("Checkpoint architecture differs from the spec's network section")
    net = net.to(device)
    z = _noise_input(spec, ckpt).to(device)

    reference = ground_truth(spec, room, source_index)
    observed_mask = (mask or spec.adapt_mask).build(spec.array.num_mics)
    obs = ObservationSet.from_reference(reference, observed_mask)

    if mode == TrainMode.LORA:
        if rank is None:
            rank = spec.train.rank or spec.sweeps.lora_rank
        if rank < 1:
            raise InvalidArgumentError(f"Rank must be >= 1, got {rank}")
        cfg = spec.train.with_mode(mode, rank=rank, alpha=spec.train.alpha)
        bundle = init_bundle(
            net, rank, cfg.effective_alpha, seed=cfg.seed, layers=cfg.lora_layers
        )
        view = attach_adapters(net, bundle)
        record = fit(view, z, obs, cfg)
        write_adapters(out_dir / ADAPTERS_FILE, record.bundle)
        detach_adapters(view)
    else:
        rank = None
        record = fit(net, z, obs, spec.train.with_mode(mode))

    summary = _summarize("adapt", record, obs, room, source_index, count_parameters(net), rank)
    logger.info(
        f"Adapted ({short_mode(mode)}) to {room}/{source_index} with {obs.mask.size} mics: "
        f"{summary.trainable_params} trainable ({summary.trainable_fraction:.1%})"
    )
    return _write_run(out_dir, record, summary, config)


@dataclass(frozen=True)
class PretrainCell:
    spec: ExperimentSpec
    room: str
    source_index: int
    out_dir: Path
    config: Config


@dataclass(frozen=True)
class AdaptCell:
    spec: ExperimentSpec
    checkpoint: Path | None
    mode: TrainMode
    rank: int | None
    room: str
    source_index: int
    mask: MaskSpec
    out_dir: Path
    config: Config
    pretrain_room: str = ""


def run_pretrain_cell(cell: PretrainCell) -> RunResult:
    apply_runtime(cell.config.runtime)
    return pretrain(
        cell.spec,
        room=cell.room,
        source_index=cell.source_index,
        out_dir=cell.out_dir,
        config=cell.config,
    )


def run_adapt_cell(cell: AdaptCell) -> RunResult:
    apply_runtime(cell.config.runtime)
    return adapt(
        cell.spec,
        cell.checkpoint,
        cell.mode,
        rank=cell.rank,
        room=cell.room,
        source_index=cell.source_index,
        mask=cell.mask,
        out_dir=cell.out_dir,
        config=cell.config,
    )


def _ensure_checkpoint(
    spec: ExperimentSpec, checkpoint: Path | None, out_dir: Path, config: Config
) -> Path:
    if checkpoint is not None:
        return Path(checkpoint)
    logger.info("No checkpoint given, pretraining first")
    result = pretrain(spec, out_dir=out_dir / "pretrain", config=config)
    return result.out_dir / CHECKPOINT_FILE


def cmd_pretrain(spec: ExperimentSpec, config: Config | None = None) -> RunResult:
    return pretrain(spec, config=config)


def cmd_adapt(
    spec: ExperimentSpec,
    checkpoint: Path | None,
    mode: str | TrainMode,
    rank: int | None = None,
    config: Config | None = None,
) -> RunResult:
    return adapt(spec, checkpoint, mode, rank=rank, config=config)


def cmd_sweep_rank(
    spec: ExperimentSpec,
    ranks: list[int] | None = None,
    checkpoint: Path | None = None,
    config: Config | None = None,
) -> pd.DataFrame:
    """
    One LoRA adaptation per rank on identical data and seeds.

    Writes ``rank_sweep.csv`` with columns rank, iteration, nmse_db,
    trainable_params, a summary JSON and an NMSE-vs-iteration plot.
    """
    config = config or get_config()
    ranks = list(spec.sweeps.ranks if ranks is None else ranks)
    if not ranks:
        raise InvalidArgumentError("At least one rank is required")
    if any(r < 1 for r in ranks):
        raise InvalidArgumentError(f"Ranks must be >= 1, got {ranks}")
    out_dir = Path(spec.output_dir)
    checkpoint = _ensure_checkpoint(spec, checkpoint, out_dir, config)
    room, source_index = adapt_target(spec)

    cells = [
        AdaptCell(
            spec=spec,
            checkpoint=checkpoint,
            mode=TrainMode.LORA,
            rank=rank,
            room=room,
            source_index=source_index,
            mask=spec.adapt_mask,
            out_dir=out_dir / "rank_sweep" / f"r{rank}",
            config=config,
        )
        for rank in ranks
    ]
    results = run_cells(run_adapt_cell, cells, config.runtime.workers)

    frames = []
    for rank, result in zip(ranks, results, strict=True):
        trajectory = result.trajectory
        nmse_column = trajectory["full_nmse_db"]
        frames.append(
            pd.DataFrame(
                {
                    "rank": rank,
                    "iteration": trajectory["iteration"],
                    "nmse_db": nmse_column,
                    "trainable_params": result.summary.trainable_params,
                }
            )
        )
    frame = pd.concat(frames, ignore_index=True)[RANK_SWEEP_COLUMNS]
    write_csv(frame, out_dir / "rank_sweep.csv")
    write_json(
        out_dir / "rank_sweep_summary.json",
        [
            {
                "rank": rank,
                "trainable_params": r.summary.trainable_params,
                "trainable_fraction": r.summary.trainable_fraction,
                "final_nmse_db": r.summary.full_nmse_db,
                "wall_time_s": r.summary.wall_time_s,
            }
            for rank, r in zip(ranks, results, strict=True)
        ],
    )
    plot_rank_sweep(frame, out_dir / "rank_sweep", config.plots)
    logger.info(f"Rank sweep over {ranks} written to {out_dir}")
    return frame


def _result_row(result: RunResult) -> dict:
    s = result.summary
    return {
        "M_tilde": s.M_tilde,
        "mode": short_mode(s.mode),
        "nmse_db": s.full_nmse_db,
        "observed_nmse_db": s.observed_nmse_db,
        "unobserved_nmse_db": s.unobserved_nmse_db,
        "trainable_params": s.trainable_params,
    }


def cmd_sweep_mics(
    spec: ExperimentSpec,
    counts: list[int] | None = None,
    checkpoint: Path | None = None,
    config: Config | None = None,
) -> pd.DataFrame:
    """
    Scratch, ft and lora for each number of observed microphones.

    The three modes of one count share the same mask. Writes ``mic_sweep.csv``
    and a grouped-bar plot.
    """
    config = config or get_config()
    counts = list(spec.sweeps.mic_counts if counts is None else counts)
    too_many = [c for c in counts if c > spec.array.num_mics or c < 1]
    if not counts or too_many:
        raise InvalidArgumentError(
            f"Counts must lie in [1, {spec.array.num_mics}], got {counts or 'none'}"
        )
    out_dir = Path(spec.output_dir)
    checkpoint = _ensure_checkpoint(spec, checkpoint, out_dir, config)
    room, source_index = adapt_target(spec)

    cells = [
        AdaptCell(
            spec=spec,
            checkpoint=None if mode == TrainMode.SCRATCH else checkpoint,
            mode=mode,
            rank=spec.sweeps.lora_rank if mode == TrainMode.LORA else None,
            room=room,
            source_index=source_index,
            mask=spec.adapt_mask.with_count(count),
            out_dir=out_dir / "mic_sweep" / f"m{count}_{short_mode(mode)}",
            config=config,
        )
        for count in counts
        for mode in SWEEP_MODES
    ]
    results = run_cells(run_adapt_cell, cells, config.runtime.workers)

    frame = pd.DataFrame([_result_row(r) for r in results], columns=MIC_SWEEP_COLUMNS)
    write_csv(frame, out_dir / "mic_sweep.csv")
    plot_mic_sweep(frame, out_dir / "mic_sweep", config.plots)
    logger.info(f"Microphone sweep over {counts} written to {out_dir}")
    return frame


def _mark_best(frame: pd.DataFrame) -> pd.DataFrame:
    """Add gap_to_best_db and lora_beats_ft per (pretrain room, target room, count) cell."""
    keys = ["pretrain_room", "target_room", "M_tilde"]
    frame = frame.copy()
    frame["gap_to_best_db"] = frame["nmse_db"] - frame.groupby(keys)["nmse_db"].transform("min")
    beats = {}
    for key, group in frame.groupby(keys, sort=False):
        by_mode = dict(zip(group["mode"], group["nmse_db"], strict=True))
        beats[key] = bool(by_mode.get("lora", float("inf")) < by_mode.get("ft", float("-inf")))
    frame["lora_beats_ft"] = [beats[tuple(row)] for row in frame[keys].itertuples(index=False)]
    return frame


def cmd_cross_room(
    spec: ExperimentSpec,
    counts: list[int] | None = None,
    config: Config | None = None,
) -> pd.DataFrame:
    """
    Pretrain in every room and adapt to each other room in all modes.

    With three rooms and two counts this yields 3 x 2 x 2 x 3 = 36 rows in
    ``cross_room.csv``; pretraining cells go to ``cross_room_pretraining.csv``.
    """
    config = config or get_config()
    if spec.scenario != Scenario.MULTI_ROOM:
        raise InvalidArgumentError("cross-room needs a multi_room spec")
    counts = list(spec.sweeps.cross_room_counts if counts is None else counts)
    if not counts or any(c < 1 or c > spec.array.num_mics for c in counts):
        raise InvalidArgumentError(
            f"Counts must lie in [1, {spec.array.num_mics}], got {counts or 'none'}"
        )
    out_dir = Path(spec.output_dir) / "cross_room"
    rooms = [room.name for room in spec.rooms]

    pretrain_cells = [
        PretrainCell(spec, room, 0, out_dir / f"pretrain_{room}", config) for room in rooms
    ]
    pretrained = run_cells(run_pretrain_cell, pretrain_cells, config.runtime.workers)

    cells = [
        AdaptCell(
            spec=spec,
            checkpoint=None if mode == TrainMode.SCRATCH else result.out_dir / CHECKPOINT_FILE,
            mode=mode,
            rank=spec.sweeps.lora_rank if mode == TrainMode.LORA else None,
            room=target,
            source_index=0,
            mask=MaskSpec(
                count=count, seed=spec.adapt_mask.seed, strategy=spec.sweeps.cross_room_mask
            ),
            out_dir=out_dir / f"{source}_to_{target}" / f"m{count}_{short_mode(mode)}",
            config=config,
            pretrain_room=source,
        )
        for source, result in zip(rooms, pretrained, strict=True)
        for target in rooms
        if target != source
        for count in counts
        for mode in SWEEP_MODES
    ]
    results = run_cells(run_adapt_cell, cells, config.runtime.workers)

    rows = [
        {"pretrain_room": cell.pretrain_room, "target_room": cell.room, **_result_row(result)}
        for cell, result in zip(cells, results, strict=True)
    ]
    frame = _mark_best(pd.DataFrame(rows))[CROSS_ROOM_COLUMNS]
    write_csv(frame, out_dir.parent / "cross_room.csv")

    diagonal = pd.DataFrame(
        [
            {
                "pretrain_room": room,
                "M_tilde": r.summary.M_tilde,
                "nmse_db": r.summary.full_nmse_db,
                "observed_nmse_db": r.summary.observed_nmse_db,
                "unobserved_nmse_db": r.summary.unobserved_nmse_db,
                "trainable_params": r.summary.trainable_params,
            }
            for room, r in zip(rooms, pretrained, strict=True)
        ],
        columns=PRETRAINING_COLUMNS,
    )
    write_csv(diagonal, out_dir.parent / "cross_room_pretraining.csv")
    plot_cross_room(frame, out_dir.parent / "cross_room", config.plots)
    logger.info(f"Cross-room matrix with {len(frame)} rows written to {out_dir.parent}")
    return frame
