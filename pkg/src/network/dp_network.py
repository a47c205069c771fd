"""MultiResUNet-style Deep Prior generator and its fixed noise input."""

import hashlib
import json
import logging
from collections.abc import Iterator
from dataclasses import dataclass

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

from src.core.errors import InvalidArgumentError, ShapeMismatchError
from src.core.signal import ImpulseResponseGrid

logger = logging.getLogger(__name__)

_PARAMETRIZED_WEIGHT = ".parametrizations.weight.original"


class NetworkConfig(BaseModel):
    """Architecture of the Deep Prior network."""

    model_config = ConfigDict(frozen=True)

    depth: int = Field(default=3, ge=1)
    base_filters: int = Field(default=128, ge=1)
    kernel_size: int = Field(default=3, ge=1)
    input_channels: int = Field(default=128, ge=1)
    output_channels: int = Field(default=1, ge=1)
    block_width: float = Field(default=1.67, gt=0)
    res_path_width: float = Field(default=0.625, gt=0)
    seed: int = 0
    leaky_slope: float = Field(default=0.1, ge=0)
    normalization: bool = True

    @field_validator("kernel_size")
    @classmethod
    def check_odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {value}")
        return value

    def architecture(self) -> dict:
        """Fields that determine layer names and shapes (everything but the seed)."""
        return self.model_dump(exclude={"seed"})

    @property
    def block_filters(self) -> int:
        """Filter budget of each MultiRes block."""
        return max(1, round(self.block_width * self.base_filters))

    @property
    def res_path_filters(self) -> int:
        return max(1, round(self.res_path_width * self.base_filters))


def _conv(in_channels: int, out_channels: int, kernel_size: int) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)


def _norm(channels: int, enabled: bool) -> nn.Module:
    return nn.InstanceNorm2d(channels, affine=True) if enabled else nn.Identity()


class MultiResBlock(nn.Module):
    """
    Three chained convolutions whose outputs are concatenated, plus a 1x1 shortcut.

    The filters are split roughly 1/6, 1/3, 1/2 across the chain.
    """

    def __init__(self, in_channels: int, filters: int, config: NetworkConfig):
        super().__init__()
        c1 = max(1, filters // 6)
        c2 = max(1, filters // 3)
        c3 = max(1, filters - c1 - c2)
        self.out_channels = c1 + c2 + c3

        k = config.kernel_size
        self.conv1 = _conv(in_channels, c1, k)
        self.conv2 = _conv(c1, c2, k)
        self.conv3 = _conv(c2, c3, k)
        self.shortcut = _conv(in_channels, self.out_channels, 1)
        self.act = nn.LeakyReLU(config.leaky_slope)
        self.norm = _norm(self.out_channels, config.normalization)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.act(self.conv1(x))
        b = self.act(self.conv2(a))
        c = self.act(self.conv3(b))
        y = torch.cat([a, b, c], dim=1) + self.shortcut(x)
        return self.norm(self.act(y))


class ResPathUnit(nn.Module):
    """k x k convolution with a 1x1 residual shortcut."""

    def __init__(self, in_channels: int, out_channels: int, config: NetworkConfig):
        super().__init__()
        self.conv = _conv(in_channels, out_channels, config.kernel_size)
        self.shortcut = _conv(in_channels, out_channels, 1)
        self.act = nn.LeakyReLU(config.leaky_slope)
        self.norm = _norm(out_channels, config.normalization)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.act(self.conv(x) + self.shortcut(x)))


def _res_path(in_channels: int, length: int, config: NetworkConfig) -> nn.Sequential:
    width = config.res_path_filters
    return nn.Sequential(
        *(ResPathUnit(in_channels if i == 0 else width, width, config) for i in range(length))
    )


class DownSample(nn.Module):
    """2x2 max pooling followed by a 1x1 projection to the stage filters."""

    def __init__(self, in_channels: int, out_channels: int, config: NetworkConfig):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.conv = _conv(in_channels, out_channels, 1)
        self.act = nn.LeakyReLU(config.leaky_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(self.pool(x)))


class UpSample(nn.Module):
    """Nearest-neighbor upsampling followed by a 1x1 projection to the stage filters."""

    def __init__(self, in_channels: int, out_channels: int, config: NetworkConfig):
        super().__init__()
        self.resize = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = _conv(in_channels, out_channels, 1)
        self.act = nn.LeakyReLU(config.leaky_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(self.resize(x)))


class DpNetwork(nn.Module):
    """
    Convolutional autoencoder N_theta mapping the fixed noise z to the RIR grid.

    Input and output use the (1, C, N, M) layout: time along the first spatial
    axis, microphones along the second.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        # Amplitude the output is multiplied by to undo observation normalization.
        self.output_scale = 1.0
        filters = config.base_filters
        budget = config.block_filters

        self.encoder = nn.ModuleList()
        self.res_paths = nn.ModuleList()
        self.down = nn.ModuleList()
        channels = config.input_channels
        skip_channels: list[int] = []
        for level in range(config.depth):
            block = MultiResBlock(channels, budget, config)
            self.encoder.append(block)
            self.res_paths.append(_res_path(block.out_channels, config.depth - level, config))
            skip_channels.append(config.res_path_filters)
            self.down.append(DownSample(block.out_channels, filters, config))
            channels = filters

        self.bottleneck = MultiResBlock(channels, budget, config)
        channels = self.bottleneck.out_channels

        self.up = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for level in reversed(range(config.depth)):
            self.up.append(UpSample(channels, filters, config))
            block = MultiResBlock(filters + skip_channels[level], budget, config)
            self.decoder.append(block)
            channels = block.out_channels

        self.head = nn.Conv2d(channels, config.output_channels, 1)
        self._base_names = [name for name, _ in self.named_parameters()]

    @property
    def downsampling_factor(self) -> int:
        return 2**self.config.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeMismatchError(
                f"Expected input (B, {self.config.input_channels}, N, M), got {tuple(x.shape)}"
            )
        factor = self.downsampling_factor
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeMismatchError(
                f"Spatial dims {tuple(x.shape[2:])} must be divisible by {factor}; "
                "use pad_to_grid"
            )

        skips = []
        for block, res_path, down in zip(self.encoder, self.res_paths, self.down, strict=True):
            x = block(x)
            skips.append(res_path(x))
            x = down(x)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.up, self.decoder, reversed(skips), strict=True):
            x = block(torch.cat([up(x), skip], dim=1))
        return self.head(x)

    def conv_layers(self) -> dict[str, nn.Conv2d]:
        """All convolutions keyed by their stable module names, in registration order."""
        return {
            name: module for name, module in self.named_modules() if isinstance(module, nn.Conv2d)
        }

    def base_named_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        """
        Base parameters under their canonical names, excluding any adapter tensors.

        Names and order are those of the freshly built network, whether or not
        adapters are currently attached.
        """
        current = {}
        for name, param in self.named_parameters():
            if name.endswith(_PARAMETRIZED_WEIGHT):
                current[name[: -len(_PARAMETRIZED_WEIGHT)] + ".weight"] = param
            elif ".parametrizations." not in name:
                current[name] = param
        for name in self._base_names:
            yield name, current[name]

    def base_parameters(self) -> list[nn.Parameter]:
        return [param for _, param in self.base_named_parameters()]


def build_network(config: NetworkConfig) -> DpNetwork:
    """Instantiate the network with parameters drawn deterministically from ``config.seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        net = DpNetwork(config)
    logger.debug(f"Built DP network with {count_parameters(net)} parameters")
    return net


def count_parameters(net: nn.Module) -> int:
    """
    Number of trainable scalars.

    For a DpNetwork this is the base parameter count, unaffected by attached
    adapters or frozen flags; for other modules, parameters requiring gradients.
    """
    if isinstance(net, DpNetwork):
        return sum(p.numel() for p in net.base_parameters())
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def network_fingerprint(net: DpNetwork) -> str:
    """Stable hash of the architecture, the ordered conv layer names and their shapes."""
    layers = [
        [name, list(conv_weight_shape(conv))] for name, conv in net.conv_layers().items()
    ]
    payload = json.dumps({"config": net.config.architecture(), "layers": layers}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def conv_weight_shape(conv: nn.Conv2d) -> tuple[int, int, int, int]:
    return (conv.out_channels, conv.in_channels // conv.groups, *conv.kernel_size)


def base_state_hash(net: DpNetwork) -> str:
    """Bitwise hash of all base parameters."""
    digest = hashlib.sha256()
    for name, param in net.base_named_parameters():
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class NoiseInput:
    """
    Fixed random input z of shape (1, C, N, M).

    Sampled once and never modified; the tensor does not require gradients.
    """

    tensor: torch.Tensor
    variance: float
    seed: int

    def __post_init__(self) -> None:
        if self.tensor.ndim != 4 or self.tensor.shape[0] != 1:
            raise ShapeMismatchError(f"Noise tensor must be (1, C, N, M), got {self.tensor.shape}")
        object.__setattr__(self, "tensor", self.tensor.detach().clone().requires_grad_(False))

    @property
    def num_samples(self) -> int:
        return int(self.tensor.shape[2])

    @property
    def num_channels(self) -> int:
        return int(self.tensor.shape[3])

    @property
    def depth_channels(self) -> int:
        return int(self.tensor.shape[1])

    def to(
        self, device: torch.device | str | None = None, dtype: torch.dtype | None = None
    ) -> "NoiseInput":
        return NoiseInput(self.tensor.to(device=device, dtype=dtype), self.variance, self.seed)


def sample_noise_input(N: int, M: int, C: int, variance: float, seed: int) -> NoiseInput:
    """Zero-mean i.i.d. Gaussian input with the given variance, reproducible per seed."""
    if min(N, M, C) < 1:
        raise InvalidArgumentError(f"Noise dims must be positive, got {(N, M, C)}")
    if variance <= 0:
        raise InvalidArgumentError(f"Noise variance must be positive, got {variance}")
    generator = torch.Generator().manual_seed(seed)
    tensor = torch.randn((1, C, N, M), generator=generator, dtype=torch.float32)
    return NoiseInput(tensor * variance**0.5, variance, seed)


@dataclass(frozen=True)
class GridPadding:
    """Padded network dims and the crop that restores the original grid."""

    original: tuple[int, int]
    padded: tuple[int, int]

    @property
    def is_identity(self) -> bool:
        return self.original == self.padded

    @property
    def crop_rows(self) -> int:
        return self.padded[0] - self.original[0]

    @property
    def crop_cols(self) -> int:
        return self.padded[1] - self.original[1]

    def crop(self, output: torch.Tensor) -> torch.Tensor:
        """Trim the trailing padded rows and columns of a (..., N', M') tensor."""
        return output[..., : self.original[0], : self.original[1]]


def pad_to_grid(grid_dims: tuple[int, int], depth: int) -> GridPadding:
    """Smallest dims >= grid_dims divisible by 2**depth."""
    factor = 2**depth
    n, m = grid_dims
    padded = (-(-n // factor) * factor, -(-m // factor) * factor)
    return GridPadding(original=(n, m), padded=padded)


def predict_grid(
    net: nn.Module,
    z: NoiseInput,
    padding: GridPadding,
    *,
    sample_rate_hz: float,
    channel_spacing_m: float,
    scale: float = 1.0,
    label: str = "",
) -> ImpulseResponseGrid:
    """Run the network on z and return the cropped first output channel as a grid."""
    with torch.no_grad():
        output = padding.crop(net(z.tensor))[0, 0]
    samples = output.cpu().numpy() * scale
    return ImpulseResponseGrid(
        samples=samples,
        sample_rate_hz=sample_rate_hz,
        channel_spacing_m=channel_spacing_m,
        origin_label=label,
    )
