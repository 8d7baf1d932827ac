"""Composite network blocks: channel attention and the two downsampling blocks.

Every block is a pure function of (input tensors, parameters, config);
parameters live in a ParameterSet under a caller-supplied prefix, e.g.
``img.salcar1.conv_a.w``. Fixed naming scheme per block:

    <p>.ca.down.{w,b}   channel squeeze (C -> C/r), applied to pooled vector
    <p>.ca.up.{w,b}     channel excite (C/r -> C)
    <p>.reduce.{w,b}    1x1 conv after the pool/saliency concat   (down blocks)
    <p>.conv_a.{w,b}    first 3x3 conv of the main path
    <p>.conv_b.{w,b}    second 3x3 conv (group-wise when split is active)
    <p>.skip.{w,b}      1x1 projection shortcut

Both downsampling blocks halve the spatial dimensions exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import ParameterSet
from .tensor import (
    Tensor,
    concat_channels,
    conv2d,
    fully_connected,
    global_avg_pool,
    leaky_relu,
    maxpool2,
    mul_broadcast,
    relu,
    sigmoid,
)


@dataclass
class BlockConfig:
    """Shape and ablation switches for one downsampling block."""

    in_channels: int
    out_channels: int
    sal_channels: int = 0  # channels of the fused saliency feature map
    ca_ratio: int = 16
    split_count: int = 32
    enable_ca: bool = True
    enable_saliency_fusion: bool = True
    enable_skips: bool = True
    enable_split: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.enable_split:
            if self.split_count <= 0:
                raise ValueError("split_count must be positive")
            if self.out_channels % self.split_count:
                raise ValueError(
                    f"out_channels {self.out_channels} not divisible by "
                    f"split_count {self.split_count}"
                )
        if self.enable_skips and self.out_channels % 2:
            raise ValueError("out_channels must be even to split across the two skip branches")

    @property
    def salcar_path_channels(self) -> int:
        """Channels of the attended main path inside a SalCAR block."""
        return self.out_channels // 2 if self.enable_skips else self.out_channels

    @property
    def branch_width(self) -> int:
        return self.out_channels // self.split_count if self.enable_split else self.out_channels


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


# ----------------------------------------------------------------------
# channel attention
# ----------------------------------------------------------------------

def init_channel_attention(
    params: ParameterSet, prefix: str, channels: int, ratio: int, rng: np.random.Generator
) -> None:
    if channels % ratio:
        raise ValueError(
            f"{prefix}: channel count {channels} not divisible by attention ratio {ratio}"
        )
    reduced = channels // ratio
    params.add(f"{prefix}.ca.down.w", he_uniform(rng, (reduced, channels), channels))
    params.add(f"{prefix}.ca.down.b", np.zeros(reduced, dtype=np.float32))
    params.add(f"{prefix}.ca.up.w", he_uniform(rng, (channels, reduced), reduced))
    params.add(f"{prefix}.ca.up.b", np.zeros(channels, dtype=np.float32))


def channel_attention(x: Tensor, params: ParameterSet, prefix: str) -> Tensor:
    """Rescale each channel by a pooled, squeezed-and-excited factor in (0, 1)."""
    pooled = global_avg_pool(x)
    z = relu(fully_connected(pooled, params[f"{prefix}.ca.down.w"], params[f"{prefix}.ca.down.b"]))
    factors = sigmoid(fully_connected(z, params[f"{prefix}.ca.up.w"], params[f"{prefix}.ca.up.b"]))
    return mul_broadcast(x, factors)


# ----------------------------------------------------------------------
# saliency-fused channel-attention residual block
# ----------------------------------------------------------------------

def init_salcar(params: ParameterSet, prefix: str, cfg: BlockConfig, rng: np.random.Generator) -> None:
    path = cfg.salcar_path_channels
    reduce_in = cfg.in_channels + (cfg.sal_channels if cfg.enable_saliency_fusion else 0)
    params.add(f"{prefix}.reduce.w", he_uniform(rng, (path, reduce_in, 1, 1), reduce_in))
    params.add(f"{prefix}.reduce.b", np.zeros(path, dtype=np.float32))
    # attention params exist whenever representable, even if the CA path is
    # disabled, so ablations can perturb them and assert invariance
    if path % cfg.ca_ratio == 0:
        init_channel_attention(params, prefix, path, cfg.ca_ratio, rng)
    elif cfg.enable_ca:
        raise ValueError(
            f"{prefix}: attended channels {path} not divisible by attention ratio {cfg.ca_ratio}"
        )
    params.add(f"{prefix}.conv_a.w", he_uniform(rng, (path, path, 3, 3), path * 9))
    params.add(f"{prefix}.conv_a.b", np.zeros(path, dtype=np.float32))
    params.add(f"{prefix}.conv_b.w", he_uniform(rng, (path, path, 3, 3), path * 9))
    params.add(f"{prefix}.conv_b.b", np.zeros(path, dtype=np.float32))
    if cfg.enable_skips:
        skip_out = cfg.out_channels - path
        params.add(f"{prefix}.skip.w", he_uniform(rng, (skip_out, cfg.in_channels, 1, 1), cfg.in_channels))
        params.add(f"{prefix}.skip.b", np.zeros(skip_out, dtype=np.float32))


def salcar_block(
    x: Tensor, f_sal: Tensor | None, cfg: BlockConfig, params: ParameterSet, prefix: str
) -> Tensor:
    """Downsampling block with saliency concat, channel attention and two shortcuts.

    Main path: maxpool -> concat saliency features -> 1x1 reduce -> CA
    -> two 3x3 convs plus an identity shortcut. A strided 1x1 projection
    of the block input is concatenated as the second output half.
    """
    slope = cfg.leaky_slope
    pooled = maxpool2(x)
    if cfg.enable_saliency_fusion:
        if f_sal is None:
            raise ValueError(f"{prefix}: saliency features required when fusion is enabled")
        if f_sal.shape[2:] != pooled.shape[2:] or f_sal.shape[0] != pooled.shape[0]:
            raise ValueError(
                f"{prefix}: saliency dims {f_sal.shape} do not match pooled input {pooled.shape}"
            )
        pooled = concat_channels([pooled, f_sal])
    t = leaky_relu(conv2d(pooled, params[f"{prefix}.reduce.w"], params[f"{prefix}.reduce.b"]), slope)
    attended = channel_attention(t, params, prefix) if cfg.enable_ca else t
    y = leaky_relu(conv2d(attended, params[f"{prefix}.conv_a.w"], params[f"{prefix}.conv_a.b"]), slope)
    y = leaky_relu(conv2d(y, params[f"{prefix}.conv_b.w"], params[f"{prefix}.conv_b.b"]), slope)
    if not cfg.enable_skips:
        return y
    main = y + attended  # parameter-free identity shortcut
    skip = conv2d(x, params[f"{prefix}.skip.w"], params[f"{prefix}.skip.b"], stride=2)
    return concat_channels([main, skip])


# ----------------------------------------------------------------------
# split-convolution channel-attention residual block
# ----------------------------------------------------------------------

def init_splitcar(params: ParameterSet, prefix: str, cfg: BlockConfig, rng: np.random.Generator) -> None:
    width = cfg.branch_width
    if cfg.in_channels % cfg.ca_ratio == 0:
        init_channel_attention(params, prefix, cfg.in_channels, cfg.ca_ratio, rng)
    elif cfg.enable_ca:
        raise ValueError(
            f"{prefix}: attended channels {cfg.in_channels} not divisible by "
            f"attention ratio {cfg.ca_ratio}"
        )
    params.add(
        f"{prefix}.conv_a.w",
        he_uniform(rng, (cfg.out_channels, cfg.in_channels, 3, 3), cfg.in_channels * 9),
    )
    params.add(f"{prefix}.conv_a.b", np.zeros(cfg.out_channels, dtype=np.float32))
    params.add(
        f"{prefix}.conv_b.w", he_uniform(rng, (cfg.out_channels, width, 3, 3), width * 9)
    )
    params.add(f"{prefix}.conv_b.b", np.zeros(cfg.out_channels, dtype=np.float32))
    if cfg.enable_skips:
        params.add(
            f"{prefix}.skip.w",
            he_uniform(rng, (cfg.out_channels, cfg.in_channels, 1, 1), cfg.in_channels),
        )
        params.add(f"{prefix}.skip.b", np.zeros(cfg.out_channels, dtype=np.float32))


def splitcar_block(x: Tensor, cfg: BlockConfig, params: ParameterSet, prefix: str) -> Tensor:
    """Downsampling block whose second conv runs as independent branches.

    The branch convolutions share no channels (group-wise second conv),
    which keeps the parameter count well below a dense conv of equal
    output width; their concatenation is summed with a 1x1 projection of
    the attended input.
    """
    slope = cfg.leaky_slope
    pooled = maxpool2(x)
    attended = channel_attention(pooled, params, prefix) if cfg.enable_ca else pooled
    groups = cfg.split_count if cfg.enable_split else 1
    a = leaky_relu(conv2d(attended, params[f"{prefix}.conv_a.w"], params[f"{prefix}.conv_a.b"]), slope)
    branches = leaky_relu(
        conv2d(a, params[f"{prefix}.conv_b.w"], params[f"{prefix}.conv_b.b"], groups=groups), slope
    )
    if not cfg.enable_skips:
        return branches
    skip = conv2d(attended, params[f"{prefix}.skip.w"], params[f"{prefix}.skip.b"])
    return branches + skip
