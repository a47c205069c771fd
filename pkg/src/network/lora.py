"""Low-rank adaptation of the network's convolutions."""

import fnmatch
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils import parametrize

from src.core.errors import (
    IncompatibleAdapterError,
    InvalidArgumentError,
    ShapeMismatchError,
    UnknownLayerError,
)
from src.network.dp_network import (
    DpNetwork,
    conv_weight_shape,
    count_parameters,
    network_fingerprint,
)

logger = logging.getLogger(__name__)

LayerShape = tuple[int, int, int, int]


@dataclass(frozen=True)
class LoraAdapter:
    """
    Low-rank factors of one convolution's weight update.

    A has shape (r, C_in, k) and B has shape (C_out, k, r); the update is
    dW[o, i, u, v] = alpha * sum_p B[o, u, p] * A[p, i, v].
    """

    A: torch.Tensor
    B: torch.Tensor
    alpha: float
    rank: int
    layer_name: str
    layer_shape: LayerShape

    def __post_init__(self) -> None:
        c_out, c_in, k, k2 = self.layer_shape
        if k != k2:
            raise ShapeMismatchError(f"Only square kernels can be adapted, got {self.layer_shape}")
        if self.rank < 1:
            raise InvalidArgumentError(f"rank must be >= 1, got {self.rank}")
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if tuple(self.A.shape) != (self.rank, c_in, k):
            raise ShapeMismatchError(
                f"{self.layer_name}: A has shape {tuple(self.A.shape)}, "
                f"expected {(self.rank, c_in, k)}"
            )
        if tuple(self.B.shape) != (c_out, k, self.rank):
            raise ShapeMismatchError(
                f"{self.layer_name}: B has shape {tuple(self.B.shape)}, "
                f"expected {(c_out, k, self.rank)}"
            )
        if not (torch.isfinite(self.A).all() and torch.isfinite(self.B).all()):
            raise InvalidArgumentError(f"{self.layer_name}: adapter entries must be finite")

    @property
    def num_parameters(self) -> int:
        """r * C_in * k + C_out * k * r."""
        return self.A.numel() + self.B.numel()


@dataclass(frozen=True)
class AdapterBundle:
    """Adapters for a set of layers of one base architecture."""

    adapters: dict[str, LoraAdapter]
    base_model_fingerprint: str
    rank: int
    alpha: float
    created_with_seed: int = 0

    def __post_init__(self) -> None:
        for name, adapter in self.adapters.items():
            if name != adapter.layer_name:
                raise InvalidArgumentError(
                    f"Bundle key {name!r} differs from adapter layer {adapter.layer_name!r}"
                )
            if adapter.rank != self.rank:
                raise InvalidArgumentError(
                    f"{name}: adapter rank {adapter.rank} differs from bundle rank {self.rank}"
                )
            if adapter.alpha != self.alpha:
                raise InvalidArgumentError(
                    f"{name}: adapter alpha {adapter.alpha} differs from bundle alpha {self.alpha}"
                )

    @property
    def layer_names(self) -> list[str]:
        return list(self.adapters)

    def __len__(self) -> int:
        return len(self.adapters)


def default_alpha(rank: int) -> float:
    """Scaling factor used when none is given: alpha = 2r."""
    return 2.0 * rank


def init_adapter(
    layer_shape: LayerShape,
    rank: int,
    alpha: float | None = None,
    seed: int = 0,
    *,
    layer_name: str = "",
    dtype: torch.dtype = torch.float32,
) -> LoraAdapter:
    """
    Create an adapter whose update is exactly zero.

    Args:
        layer_shape: Base weight shape (C_out, C_in, k, k)
        rank: Contraction dimension r
        alpha: Scaling factor, defaults to 2r
        seed: Seed for the Gaussian draw of A
        layer_name: Name of the adapted layer
        dtype: Floating dtype of A and B

    Returns:
        Adapter with A ~ N(0, 1 / (r * C_in * k)) and B = 0

    Raises:
        InvalidArgumentError: If rank < 1
    """
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    c_out, c_in, k, _ = layer_shape
    generator = torch.Generator().manual_seed(int(seed))
    std = 1.0 / float(np.sqrt(rank * c_in * k))
    a = torch.randn((rank, c_in, k), generator=generator, dtype=dtype) * std
    b = torch.zeros((c_out, k, rank), dtype=dtype)
    return LoraAdapter(
        A=a,
        B=b,
        alpha=default_alpha(rank) if alpha is None else float(alpha),
        rank=rank,
        layer_name=layer_name,
        layer_shape=tuple(int(d) for d in layer_shape),
    )


def _contract(a: torch.Tensor, b: torch.Tensor, alpha: float) -> torch.Tensor:
    return alpha * torch.einsum("our,riv->oiuv", b, a)


def compose_delta(adapter: LoraAdapter) -> torch.Tensor:
    """Materialize the weight update dW with the base weight's (C_out, C_in, k, k) layout."""
    return _contract(adapter.A, adapter.B, adapter.alpha)


def adapted_forward(
    x: torch.Tensor,
    base_weights: torch.Tensor,
    adapter: LoraAdapter,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Same-padded convolution of x with W + dW."""
    if tuple(base_weights.shape) != adapter.layer_shape:
        raise ShapeMismatchError(
            f"Base weight shape {tuple(base_weights.shape)} differs from adapter layer shape "
            f"{adapter.layer_shape}"
        )
    if x.ndim != 4 or x.shape[1] != adapter.layer_shape[1]:
        raise ShapeMismatchError(
            f"Expected input (B, {adapter.layer_shape[1]}, H, W), got {tuple(x.shape)}"
        )
    k = adapter.layer_shape[2]
    return F.conv2d(x, base_weights + compose_delta(adapter), bias, padding=k // 2)


class LoraParametrization(nn.Module):
    """Weight parametrization W -> W + alpha * contract(B, A) with trainable A and B."""

    def __init__(self, adapter: LoraAdapter, like: torch.Tensor):
        super().__init__()
        self.A = nn.Parameter(adapter.A.detach().to(dtype=like.dtype, device=like.device).clone())
        self.B = nn.Parameter(adapter.B.detach().to(dtype=like.dtype, device=like.device).clone())
        self.alpha = adapter.alpha
        self.rank = adapter.rank

    def delta(self) -> torch.Tensor:
        return _contract(self.A, self.B, self.alpha)

    def forward(self, weight: torch.Tensor) -> torch.Tensor:
        return weight + self.delta()


@dataclass
class AdaptedNetwork:
    """
    A DP network with adapters attached to some of its convolutions.

    While attached, base parameters are frozen and the trainable set is exactly
    the adapters' A and B tensors.
    """

    net: DpNetwork
    base_model_fingerprint: str
    rank: int
    alpha: float
    created_with_seed: int
    layer_names: list[str]
    allow_fingerprint_override: bool = False
    output_scale: float | None = None
    _base_flags: dict[str, bool] = field(default_factory=dict, repr=False)
    attached: bool = True

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def _parametrization(self, layer_name: str) -> LoraParametrization:
        conv = self.net.get_submodule(layer_name)
        return conv.parametrizations.weight[0]

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Adapter tensors in layer order, A before B."""
        params = []
        for name in self.layer_names:
            lora = self._parametrization(name)
            params.extend([lora.A, lora.B])
        return params

    def extract_bundle(self) -> AdapterBundle:
        """Snapshot the current adapter values as a detached bundle."""
        if not self.attached:
            raise InvalidArgumentError("Adapters were detached from this view")
        convs = self.net.conv_layers()
        adapters = {}
        for name in self.layer_names:
            lora = self._parametrization(name)
            adapters[name] = LoraAdapter(
                A=lora.A.detach().clone(),
                B=lora.B.detach().clone(),
                alpha=lora.alpha,
                rank=lora.rank,
                layer_name=name,
                layer_shape=conv_weight_shape(convs[name]),
            )
        return AdapterBundle(
            adapters=adapters,
            base_model_fingerprint=self.base_model_fingerprint,
            rank=self.rank,
            alpha=self.alpha,
            created_with_seed=self.created_with_seed,
        )


def _select_layers(net: DpNetwork, layers: Sequence[str] | None) -> list[str]:
    names = list(net.conv_layers())
    if layers is None:
        return names
    selected = [n for n in names if any(fnmatch.fnmatchcase(n, pattern) for pattern in layers)]
    if not selected:
        raise UnknownLayerError(f"No convolution matches the layer patterns {list(layers)}")
    return selected


def init_bundle(
    net: DpNetwork,
    rank: int,
    alpha: float | None = None,
    seed: int = 0,
    layers: Sequence[str] | None = None,
) -> AdapterBundle:
    """
    Fresh zero-update adapters for every convolution of ``net``.

    Args:
        net: Base network
        rank: Adapter rank
        alpha: Scaling factor, defaults to 2r
        seed: Bundle seed; per-layer seeds are spawned from it
        layers: Optional glob patterns restricting the adapted layer names

    Returns:
        Bundle fingerprinted for ``net``
    """
    alpha = default_alpha(rank) if alpha is None else float(alpha)
    convs = net.conv_layers()
    names = _select_layers(net, layers)
    layer_seeds = np.random.SeedSequence(seed).generate_state(len(names))
    adapters = {}
    for name, layer_seed in zip(names, layer_seeds, strict=True):
        conv = convs[name]
        adapters[name] = init_adapter(
            conv_weight_shape(conv),
            rank,
            alpha,
            int(layer_seed),
            layer_name=name,
            dtype=conv.weight.dtype,
        )
    return AdapterBundle(
        adapters=adapters,
        base_model_fingerprint=network_fingerprint(net),
        rank=rank,
        alpha=alpha,
        created_with_seed=seed,
    )


def attach_adapters(
    net: DpNetwork,
    bundle: AdapterBundle,
    *,
    allow_fingerprint_override: bool = False,
) -> AdaptedNetwork:
    """
    Attach a bundle so that every bundled convolution uses W + dW.

    Args:
        net: Base network without adapters
        bundle: Adapters to attach
        allow_fingerprint_override: Accept a bundle fingerprinted for another
            network, provided every layer name and shape still matches

    Returns:
        View whose trainable set is exactly the bundle's tensors

    Raises:
        IncompatibleAdapterError: Fingerprint or layer shape mismatch
        UnknownLayerError: A bundled layer is not a convolution of ``net``
    """
    convs = net.conv_layers()
    if any(parametrize.is_parametrized(conv) for conv in convs.values()):
        raise InvalidArgumentError("Network already has adapters attached; use swap_adapters")

    fingerprint = network_fingerprint(net)
    if bundle.base_model_fingerprint != fingerprint:
        if not allow_fingerprint_override:
            raise IncompatibleAdapterError(
                f"Bundle fingerprint {bundle.base_model_fingerprint[:12]} does not match "
                f"network {fingerprint[:12]}"
            )
        logger.warning("Attaching adapters across fingerprints (override requested)")

    for name, adapter in bundle.adapters.items():
        if name not in convs:
            raise UnknownLayerError(f"Layer {name!r} is not an adaptable convolution")
        shape = conv_weight_shape(convs[name])
        if shape != adapter.layer_shape:
            raise IncompatibleAdapterError(
                f"Layer {name!r} has shape {shape}, adapter expects {adapter.layer_shape}"
            )

    flags = {name: p.requires_grad for name, p in net.base_named_parameters()}
    for param in net.base_parameters():
        param.requires_grad_(False)
    for name, adapter in bundle.adapters.items():
        conv = convs[name]
        lora = LoraParametrization(adapter, conv.weight)
        parametrize.register_parametrization(conv, "weight", lora)

    logger.debug(f"Attached {len(bundle)} adapters of rank {bundle.rank}")
    return AdaptedNetwork(
        net=net,
        base_model_fingerprint=bundle.base_model_fingerprint,
        rank=bundle.rank,
        alpha=bundle.alpha,
        created_with_seed=bundle.created_with_seed,
        layer_names=bundle.layer_names,
        allow_fingerprint_override=allow_fingerprint_override,
        _base_flags=flags,
    )


def detach_adapters(view: AdaptedNetwork | DpNetwork) -> DpNetwork:
    """
    Remove attached adapters and restore the frozen base network.

    Base parameters are the original tensors, bitwise unchanged; their
    requires_grad flags are restored. A plain network is returned as is.
    """
    if isinstance(view, DpNetwork):
        return view
    net = view.net
    if not view.attached:
        return net
    for name in view.layer_names:
        parametrize.remove_parametrizations(
            net.get_submodule(name), "weight", leave_parametrized=False
        )
    for name, param in net.base_named_parameters():
        param.requires_grad_(view._base_flags.get(name, True))
    view.attached = False
    return net


def swap_adapters(view: AdaptedNetwork, bundle: AdapterBundle) -> AdaptedNetwork:
    """Replace the attached adapters with another bundle."""
    net = detach_adapters(view)
    return attach_adapters(net, bundle, allow_fingerprint_override=view.allow_fingerprint_override)


def bundle_param_count(bundle: AdapterBundle, base: DpNetwork | int) -> tuple[int, float]:
    """
    Adapter scalars and their fraction of the base network.

    Args:
        bundle: Adapter bundle
        base: Base network or its parameter count

    Returns:
        (sum of r*C_in*k + C_out*k*r over layers, that sum / base parameter count)
    """
    total = sum(adapter.num_parameters for adapter in bundle.adapters.values())
    if total == 0:
        return 0, 0.0
    base_count = base if isinstance(base, int) else count_parameters(base)
    return total, total / base_count
