"""Deep Prior fitting loop in scratch, full fine-tune and LoRA modes, plus evaluation."""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from src.core.errors import (
    DegenerateReferenceError,
    InvalidArgumentError,
    MaskMismatchError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from src.core.signal import (
    NMSE_FLOOR_DB,
    ImpulseResponseGrid,
    SamplingMask,
    apply_sampling,
    nmse,
    nmse_per_channel,
)
from src.network.dp_network import (
    DpNetwork,
    GridPadding,
    NoiseInput,
    pad_to_grid,
    predict_grid,
)
from src.network.lora import AdaptedNetwork, AdapterBundle, default_alpha

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["iteration", "l1_loss", "observed_nmse_db", "full_nmse_db"]


class TrainMode(str, Enum):
    """Which parameters an optimization run updates."""

    SCRATCH = "scratch"
    FULL_FINETUNE = "full_finetune"
    LORA = "lora"


class TrainConfig(BaseModel):
    """Optimizer and schedule of one fit."""

    model_config = ConfigDict(frozen=True)

    mode: TrainMode = TrainMode.SCRATCH
    learning_rate: float = Field(default=0.05, gt=0)
    iterations: int = Field(default=500, ge=1)
    optimizer: Literal["adamw"] = "adamw"
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    rank: int | None = Field(default=None, ge=1)
    alpha: float | None = Field(default=None, gt=0)
    lora_layers: list[str] | None = None
    seed: int = 0
    eval_every: int = Field(default=0, ge=0)
    normalize: bool = True

    @model_validator(mode="after")
    def check_rank_matches_mode(self) -> Self:
        if self.mode == TrainMode.LORA and self.rank is None:
            raise ValueError("rank is required in lora mode")
        if self.mode != TrainMode.LORA and self.rank is not None:
            raise ValueError(f"rank is only valid in lora mode, got mode={self.mode.value}")
        return self

    @property
    def effective_alpha(self) -> float | None:
        if self.rank is None:
            return None
        return self.alpha if self.alpha is not None else default_alpha(self.rank)

    def with_mode(
        self, mode: TrainMode, rank: int | None = None, alpha: float | None = None
    ) -> "TrainConfig":
        """Copy of this config for another mode (rank and alpha only kept for lora)."""
        data = self.model_dump()
        data.update(mode=mode, rank=rank if mode == TrainMode.LORA else None)
        data["alpha"] = alpha if mode == TrainMode.LORA else None
        return TrainConfig.model_validate(data)


@dataclass(frozen=True)
class ObservationSet:
    """Sparse measurements H~ with the mask that produced them."""

    observed: ImpulseResponseGrid
    mask: SamplingMask
    full_reference: ImpulseResponseGrid | None = None

    def __post_init__(self) -> None:
        if self.observed.num_channels != self.mask.size:
            raise MaskMismatchError(
                f"Observed grid has {self.observed.num_channels} channels, "
                f"mask selects {self.mask.size}"
            )
        ref = self.full_reference
        if ref is not None:
            if ref.num_channels != self.mask.total_channels:
                raise MaskMismatchError(
                    f"Reference has {ref.num_channels} channels, "
                    f"mask expects {self.mask.total_channels}"
                )
            if ref.num_samples != self.observed.num_samples:
                raise ShapeMismatchError(
                    f"Reference has {ref.num_samples} samples, "
                    f"observations have {self.observed.num_samples}"
                )

    @classmethod
    def from_reference(
        cls, reference: ImpulseResponseGrid, mask: SamplingMask, keep_reference: bool = True
    ) -> "ObservationSet":
        """Observe ``mask`` columns of a full grid."""
        return cls(
            observed=apply_sampling(reference, mask),
            mask=mask,
            full_reference=reference if keep_reference else None,
        )

    @property
    def grid_dims(self) -> tuple[int, int]:
        return (self.observed.num_samples, self.mask.total_channels)

    def without_reference(self) -> "ObservationSet":
        return ObservationSet(self.observed, self.mask, None)


def masked_l1_loss(prediction: ImpulseResponseGrid, obs: ObservationSet) -> float:
    """Mean absolute error between the observed columns of ``prediction`` and ``obs``."""
    if prediction.num_channels != obs.mask.total_channels:
        raise MaskMismatchError(
            f"Prediction has {prediction.num_channels} channels, "
            f"mask expects {obs.mask.total_channels}"
        )
    if prediction.num_samples != obs.observed.num_samples:
        raise ShapeMismatchError(
            f"Prediction has {prediction.num_samples} samples, "
            f"observations have {obs.observed.num_samples}"
        )
    selected = apply_sampling(prediction, obs.mask).samples.astype(np.float64)
    return float(np.mean(np.abs(selected - obs.observed.samples.astype(np.float64))))


def masked_l1_tensor(
    prediction: torch.Tensor, observed: torch.Tensor, indices: torch.Tensor
) -> torch.Tensor:
    """Differentiable masked l1 loss on an (N, M) prediction."""
    return (prediction.index_select(1, indices) - observed).abs().mean()


def _nmse_db(estimate: torch.Tensor, reference: torch.Tensor) -> float:
    energy = reference.pow(2).sum(dim=0)
    ratios = (estimate - reference).pow(2).sum(dim=0) / energy
    mean_ratio = float(ratios.mean())
    if mean_ratio <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(mean_ratio), NMSE_FLOOR_DB)


def _check_energy(reference: torch.Tensor, what: str) -> None:
    silent = torch.nonzero(reference.pow(2).sum(dim=0) == 0).flatten().tolist()
    if silent:
        raise DegenerateReferenceError(f"{what} channels with zero energy: {silent}")


@dataclass(frozen=True)
class EvaluationMetrics:
    """NMSE of an estimate over all, observed and unobserved channels."""

    full_nmse_db: float
    observed_nmse_db: float
    unobserved_nmse_db: float | None
    per_channel_db: np.ndarray

    def to_dict(self) -> dict:
        return {
            "full_nmse_db": self.full_nmse_db,
            "observed_nmse_db": self.observed_nmse_db,
            "unobserved_nmse_db": self.unobserved_nmse_db,
            "per_channel_db": [float(v) for v in self.per_channel_db],
        }


@dataclass(frozen=True)
class TrainStep:
    """One trajectory row, measured on the forward pass preceding the update."""

    iteration: int
    l1_loss: float
    observed_nmse_db: float
    full_nmse_db: float


@dataclass(frozen=True)
class EvaluationRow:
    """Evaluation taken after ``iteration`` updates."""

    iteration: int
    metrics: EvaluationMetrics


@dataclass(frozen=True)
class TrainRecord:
    """Trajectory and outcome of one fit."""

    mode: TrainMode
    history: list[TrainStep]
    final_loss: float
    final_metrics: EvaluationMetrics | None
    estimate: ImpulseResponseGrid
    scale: float
    wall_time_s: float
    trainable_param_count: int
    bundle: AdapterBundle | None = None
    evaluations: list[EvaluationRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Trajectory as a frame with the iteration, loss and NMSE columns."""
        return pd.DataFrame(
            [
                (s.iteration, s.l1_loss, s.observed_nmse_db, s.full_nmse_db)
                for s in self.history
            ],
            columns=TRAJECTORY_COLUMNS,
        )

    def evaluations_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "iteration": row.iteration,
                    "full_nmse_db": row.metrics.full_nmse_db,
                    "observed_nmse_db": row.metrics.observed_nmse_db,
                    "unobserved_nmse_db": row.metrics.unobserved_nmse_db,
                }
                for row in self.evaluations
            ],
            columns=["iteration", "full_nmse_db", "observed_nmse_db", "unobserved_nmse_db"],
        )


def resolve_network(model: DpNetwork | AdaptedNetwork) -> DpNetwork:
    """The underlying module of a network or adapted view."""
    return model.net if isinstance(model, AdaptedNetwork) else model


def output_scale(model: DpNetwork | AdaptedNetwork) -> float:
    """Normalization factor recorded by the last fit; a view falls back to its base network."""
    if isinstance(model, AdaptedNetwork) and model.output_scale is not None:
        return model.output_scale
    return resolve_network(model).output_scale


def _trainable_set(model: DpNetwork | AdaptedNetwork, mode: TrainMode) -> list[nn.Parameter]:
    if mode == TrainMode.LORA:
        if not isinstance(model, AdaptedNetwork) or not model.attached:
            raise InvalidArgumentError("lora mode requires a network with adapters attached")
        return model.trainable_parameters()
    if isinstance(model, AdaptedNetwork):
        raise InvalidArgumentError(f"{mode.value} mode expects a network without adapters")
    params = model.base_parameters()
    for param in params:
        param.requires_grad_(True)
    return params


def _padding_for(net: DpNetwork, z: NoiseInput, grid_dims: tuple[int, int]) -> GridPadding:
    padding = pad_to_grid(grid_dims, net.config.depth)
    if (z.num_samples, z.num_channels) != padding.padded:
        raise ShapeMismatchError(
            f"Noise input is {z.num_samples}x{z.num_channels}, "
            f"expected {padding.padded[0]}x{padding.padded[1]} for grid {grid_dims}"
        )
    return padding


def fit(
    model: DpNetwork | AdaptedNetwork,
    z: NoiseInput,
    obs: ObservationSet,
    cfg: TrainConfig,
) -> TrainRecord:
    """
    Minimize the masked l1 loss of net(z) against the observations.

    Args:
        model: Plain network for scratch/full_finetune, adapted view for lora
        z: Fixed noise input at the padded grid dims
        obs: Observations, optionally with the full reference for monitoring
        cfg: Training configuration

    Returns:
        Record with the per-iteration trajectory and final metrics

    Raises:
        TrainingDivergedError: If the loss becomes NaN or infinite
        InvalidArgumentError: If the model does not suit ``cfg.mode``
    """
    net = resolve_network(model)
    params = _trainable_set(model, cfg.mode)
    padding = _padding_for(net, z, obs.grid_dims)
    device, dtype = z.tensor.device, z.tensor.dtype

    observed_np = obs.observed.samples
    peak = float(np.max(np.abs(observed_np)))
    scale = peak if cfg.normalize and peak > 0 else 1.0

    target = torch.as_tensor(observed_np / scale, dtype=dtype, device=device)
    indices = torch.as_tensor(obs.mask.indices, dtype=torch.long, device=device)
    _check_energy(target, "Observed")
    reference = None
    if obs.full_reference is not None:
        reference = torch.as_tensor(
            obs.full_reference.samples / scale, dtype=dtype, device=device
        )
        _check_energy(reference, "Reference")

    optimizer = torch.optim.AdamW(
        params,
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.epsilon,
        weight_decay=cfg.weight_decay,
    )
    log_every = cfg.eval_every or 100
    history: list[TrainStep] = []
    evaluations: list[EvaluationRow] = []
    net.train()
    started = time.perf_counter()

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for iteration in range(cfg.iterations):
            optimizer.zero_grad(set_to_none=True)
            prediction = padding.crop(net(z.tensor))[0, 0]
            loss = masked_l1_tensor(prediction, target, indices)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(iteration, loss_value)

            with torch.no_grad():
                observed_db = _nmse_db(prediction.index_select(1, indices), target)
                full_db = _nmse_db(prediction, reference) if reference is not None else math.nan
            history.append(TrainStep(iteration, loss_value, observed_db, full_db))

            loss.backward()
            optimizer.step()

            done = iteration + 1
            if cfg.eval_every and done % cfg.eval_every == 0 and obs.full_reference is not None:
                metrics = evaluate(model, z, obs.full_reference, obs.mask, scale=scale)
                evaluations.append(EvaluationRow(done, metrics))
            if done % log_every == 0:
                logger.info(
                    f"[{cfg.mode.value}] iter {done}/{cfg.iterations}: "
                    f"loss={loss_value:.5f} observed={observed_db:.2f} dB"
                )

    wall_time_s = time.perf_counter() - started
    net.eval()
    # A view keeps its own factor so the shared base network is left as pretrained.
    model.output_scale = scale

    label = obs.full_reference.origin_label if obs.full_reference else obs.observed.origin_label
    estimate = predict_grid(
        net,
        z,
        padding,
        sample_rate_hz=obs.observed.sample_rate_hz,
        channel_spacing_m=obs.observed.channel_spacing_m,
        scale=scale,
        label=label,
    )
    # Same normalized units as the trajectory.
    final_loss = masked_l1_loss(estimate, obs) / scale
    final_metrics = None
    if obs.full_reference is not None:
        final_metrics = _metrics_for(estimate, obs.full_reference, obs.mask)

    bundle = model.extract_bundle() if isinstance(model, AdaptedNetwork) else None
    trainable = sum(p.numel() for p in params)
    summary = f"[{cfg.mode.value}] done in {wall_time_s:.1f}s, final loss {final_loss:.5f}"
    if final_metrics is not None:
        summary += f", NMSE {final_metrics.full_nmse_db:.2f} dB"
    logger.info(f"{summary}, {trainable} trainable parameters")

    return TrainRecord(
        mode=cfg.mode,
        history=history,
        final_loss=final_loss,
        final_metrics=final_metrics,
        estimate=estimate,
        scale=scale,
        wall_time_s=wall_time_s,
        trainable_param_count=trainable,
        bundle=bundle,
        evaluations=evaluations,
    )


def _metrics_for(
    estimate: ImpulseResponseGrid, reference: ImpulseResponseGrid, mask: SamplingMask
) -> EvaluationMetrics:
    complement = mask.complement()
    unobserved = None
    if complement:
        hidden = SamplingMask(complement, mask.total_channels)
        unobserved = nmse(apply_sampling(estimate, hidden), apply_sampling(reference, hidden))
    return EvaluationMetrics(
        full_nmse_db=nmse(estimate, reference),
        observed_nmse_db=nmse(apply_sampling(estimate, mask), apply_sampling(reference, mask)),
        unobserved_nmse_db=unobserved,
        per_channel_db=nmse_per_channel(estimate, reference),
    )


def evaluate(
    model: DpNetwork | AdaptedNetwork,
    z: NoiseInput,
    reference: ImpulseResponseGrid,
    mask: SamplingMask,
    scale: float | None = None,
) -> EvaluationMetrics:
    """
    NMSE of the network estimate against a full reference grid.

    Args:
        model: Network or adapted view
        z: Noise input at the padded grid dims
        reference: Full N x M ground truth
        mask: Observed channels; the unobserved NMSE uses its complement
        scale: Amplitude factor applied to the network output; None uses the
            factor recorded on the model by its last fit

    Returns:
        Full, observed, unobserved (None when every channel is observed) and
        per-channel NMSE in dB
    """
    net = resolve_network(model)
    padding = _padding_for(net, z, reference.shape)
    estimate = predict_grid(
        net,
        z,
        padding,
        sample_rate_hz=reference.sample_rate_hz,
        channel_spacing_m=reference.channel_spacing_m,
        scale=output_scale(model) if scale is None else scale,
    )
    return _metrics_for(estimate, reference, mask)


def baseline_nearest_neighbor(obs: ObservationSet) -> ImpulseResponseGrid:
    """Fill each unobserved column with its nearest observed column (ties to the lower index)."""
    indices = obs.mask.indices
    if not indices:
        raise InvalidArgumentError("Nearest-neighbor baseline needs at least one observation")
    positions = np.asarray(indices)
    source_columns = []
    for m in range(obs.mask.total_channels):
        # argmin returns the first minimum, which is the lower index on ties.
        source_columns.append(int(np.argmin(np.abs(positions - m))))
    samples = obs.observed.samples[:, source_columns]
    return obs.observed.with_samples(samples)
