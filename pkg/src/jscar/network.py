"""Full scoring network: three feature subnets, fusion, heads, pooling.

The reference and distorted patches run through one shared-weight image
subnet; a saliency subnet supplies intermediate feature maps that are
concatenated into the first two downsampling blocks; a detection-map
subnet with the same topology (but its own weights) embeds the
visibility prior. The per-patch feature vector (difference of image
features, concatenated with the detection features) feeds two small
fully connected heads that predict a positive patch weight and an
unbounded patch quality; the image score is their normalized weighted
average.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from .blocks import (
    BlockConfig,
    he_uniform,
    init_salcar,
    init_splitcar,
    salcar_block,
    splitcar_block,
)
from .checkpoint import ParameterSet
from .dataset import PatchQuad
from .tensor import (
    Tensor,
    concat_vectors,
    conv2d,
    flatten_features,
    fully_connected,
    leaky_relu,
    maxpool2,
    softplus,
    weighted_mean,
)

WEIGHT_FLOOR = 1e-6  # added to softplus so patch weights stay strictly positive


@dataclass
class NetworkConfig:
    """Architecture hyper-parameters and ablation switches."""

    stem_channels: int = 32
    stage_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    sal_channels: int = 32
    ca_ratio: int = 16
    split_count: int = 32
    head_hidden: int = 512
    leaky_slope: float = 0.2
    patch_size: int = 32
    img_channels: int = 3
    enable_ca: bool = True
    enable_saliency_fusion: bool = True
    enable_skips: bool = True
    enable_split: bool = True
    enable_jnd: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 4:
            raise ValueError("stage_channels must list exactly four stages (2 salcar + 2 splitcar)")
        if self.patch_size % 16 or self.patch_size < 16:
            raise ValueError("patch_size must be a positive multiple of 16")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")

    # ---- derived shapes ------------------------------------------------
    @property
    def final_spatial(self) -> int:
        return self.patch_size // 16

    @property
    def feature_length(self) -> int:
        return self.final_spatial**2 * self.stage_channels[3]

    @property
    def fused_length(self) -> int:
        return self.feature_length * (2 if self.enable_jnd else 1)

    def block_config(self, stage: int) -> BlockConfig:
        chans = (self.stem_channels,) + self.stage_channels
        return BlockConfig(
            in_channels=chans[stage],
            out_channels=chans[stage + 1],
            sal_channels=self.sal_channels,
            ca_ratio=self.ca_ratio,
            split_count=self.split_count,
            enable_ca=self.enable_ca,
            enable_saliency_fusion=self.enable_saliency_fusion and stage < 2,
            enable_skips=self.enable_skips,
            enable_split=self.enable_split and stage >= 2,  # split stages only
            leaky_slope=self.leaky_slope,
        )


def config_hash(cfg: NetworkConfig) -> int:
    """Stable 64-bit digest of the architecture (checked on checkpoint load)."""
    text = "\n".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class ForwardOutput:
    """Per-patch weights/qualities and the pooled image score."""

    weights: Tensor  # (N,), strictly positive
    qualities: Tensor  # (N,)
    score: Tensor  # scalar
    origins: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_patches(self) -> int:
        return self.weights.shape[0]

    def normalized_weights(self) -> np.ndarray:
        w = self.weights.data.astype(np.float64)
        return w / w.sum()


# ----------------------------------------------------------------------
# parameter construction
# ----------------------------------------------------------------------

def init_network_params(cfg: NetworkConfig, seed: int | np.random.Generator = 0) -> ParameterSet:
    """He-uniform weights, zero biases, in a fixed deterministic order.

    Checkpoint entry names are fixed:

        sal.conv1..conv4.{w,b}                       saliency subnet
        img.stem.{w,b}, img.salcar1.*, img.salcar2.*,
        img.splitcar1.*, img.splitcar2.*             shared image subnet
        jnd.<same block tree as img>                 detection-map subnet
        head_w.fc1/fc2.{w,b}, head_q.fc1/fc2.{w,b}   weight/quality heads

    with the per-block leaf names documented in ``jscar.blocks``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = ParameterSet()

    sc = cfg.sal_channels
    shapes = [(sc, 1), (sc, sc), (sc, sc), (sc, sc)]
    for i, (o, c) in enumerate(shapes, start=1):
        params.add(f"sal.conv{i}.w", he_uniform(rng, (o, c, 3, 3), c * 9))
        params.add(f"sal.conv{i}.b", np.zeros(o, dtype=np.float32))

    for prefix, in_ch in (("img", cfg.img_channels), ("jnd", 1)):
        params.add(f"{prefix}.stem.w", he_uniform(rng, (cfg.stem_channels, in_ch, 3, 3), in_ch * 9))
        params.add(f"{prefix}.stem.b", np.zeros(cfg.stem_channels, dtype=np.float32))
        init_salcar(params, f"{prefix}.salcar1", cfg.block_config(0), rng)
        init_salcar(params, f"{prefix}.salcar2", cfg.block_config(1), rng)
        init_splitcar(params, f"{prefix}.splitcar1", cfg.block_config(2), rng)
        init_splitcar(params, f"{prefix}.splitcar2", cfg.block_config(3), rng)

    for head in ("head_w", "head_q"):
        params.add(f"{head}.fc1.w", he_uniform(rng, (cfg.head_hidden, cfg.fused_length), cfg.fused_length))
        params.add(f"{head}.fc1.b", np.zeros(cfg.head_hidden, dtype=np.float32))
        params.add(f"{head}.fc2.w", he_uniform(rng, (1, cfg.head_hidden), cfg.head_hidden))
        params.add(f"{head}.fc2.b", np.zeros(1, dtype=np.float32))
    return params


def count_parameters(params: ParameterSet) -> int:
    """Exact number of trainable scalars."""
    return params.n_scalars()


# ----------------------------------------------------------------------
# subnets
# ----------------------------------------------------------------------

def sal_subnet(p_sal: Tensor, params: ParameterSet, cfg: NetworkConfig) -> tuple[Tensor, Tensor]:
    """Two conv+conv+pool stages; returns features at half and quarter size."""
    if p_sal.ndim != 4 or p_sal.shape[1] != 1 or p_sal.shape[2:] != (cfg.patch_size, cfg.patch_size):
        raise ValueError(
            f"sal_subnet expects (N, 1, {cfg.patch_size}, {cfg.patch_size}) patches, got {p_sal.shape}"
        )
    s = cfg.leaky_slope
    t = leaky_relu(conv2d(p_sal, params["sal.conv1.w"], params["sal.conv1.b"]), s)
    t = leaky_relu(conv2d(t, params["sal.conv2.w"], params["sal.conv2.b"]), s)
    f1 = maxpool2(t)
    t = leaky_relu(conv2d(f1, params["sal.conv3.w"], params["sal.conv3.b"]), s)
    t = leaky_relu(conv2d(t, params["sal.conv4.w"], params["sal.conv4.b"]), s)
    f2 = maxpool2(t)
    return f1, f2


def img_subnet(
    p: Tensor,
    f_sal1: Tensor | None,
    f_sal2: Tensor | None,
    params: ParameterSet,
    cfg: NetworkConfig,
    prefix: str = "img",
) -> Tensor:
    """Stem conv, two saliency-fused blocks, two split blocks, flatten."""
    expect_c = cfg.img_channels if prefix == "img" else 1
    if p.ndim != 4 or p.shape[1] != expect_c or p.shape[2:] != (cfg.patch_size, cfg.patch_size):
        raise ValueError(
            f"{prefix}_subnet expects (N, {expect_c}, {cfg.patch_size}, {cfg.patch_size}), got {p.shape}"
        )
    t = leaky_relu(conv2d(p, params[f"{prefix}.stem.w"], params[f"{prefix}.stem.b"]), cfg.leaky_slope)
    t = salcar_block(t, f_sal1, cfg.block_config(0), params, f"{prefix}.salcar1")
    t = salcar_block(t, f_sal2, cfg.block_config(1), params, f"{prefix}.salcar2")
    t = splitcar_block(t, cfg.block_config(2), params, f"{prefix}.splitcar1")
    t = splitcar_block(t, cfg.block_config(3), params, f"{prefix}.splitcar2")
    return flatten_features(t)


def jnd_subnet(
    p_jnd: Tensor,
    f_sal1: Tensor | None,
    f_sal2: Tensor | None,
    params: ParameterSet,
    cfg: NetworkConfig,
) -> Tensor:
    """Same topology as the image subnet, but with its own weights and 1-channel input."""
    return img_subnet(p_jnd, f_sal1, f_sal2, params, cfg, prefix="jnd")


def fuse(f_ref: Tensor, f_dst: Tensor, f_jnd: Tensor | None) -> Tensor:
    """Concatenate (reference - distorted) difference with detection features."""
    if f_ref.shape != f_dst.shape:
        raise ValueError(f"feature length mismatch: {f_ref.shape} vs {f_dst.shape}")
    diff = f_ref - f_dst
    if f_jnd is None:
        return diff
    return concat_vectors([diff, f_jnd])


def heads(fused: Tensor, params: ParameterSet, cfg: NetworkConfig) -> tuple[Tensor, Tensor]:
    """Patch weight (strictly positive) and patch quality predictions."""
    if fused.ndim != 2 or fused.shape[1] != cfg.fused_length:
        raise ValueError(
            f"heads expect fused features of length {cfg.fused_length}, got {fused.shape}"
        )
    n = fused.shape[0]
    s = cfg.leaky_slope

    def run(head: str) -> Tensor:
        t = leaky_relu(fully_connected(fused, params[f"{head}.fc1.w"], params[f"{head}.fc1.b"]), s)
        return fully_connected(t, params[f"{head}.fc2.w"], params[f"{head}.fc2.b"]).reshape(n)

    w = softplus(run("head_w")) + WEIGHT_FLOOR
    q = run("head_q")
    return w, q


def pool_score(w: Tensor, q: Tensor) -> Tensor:
    """Normalized weighted average of patch qualities (convex combination)."""
    if w.ndim != 1 or w.shape != q.shape:
        raise ValueError(f"pool_score expects equal-length vectors, got {w.shape} and {q.shape}")
    if w.shape[0] < 1:
        raise ValueError("pool_score requires at least one patch")
    if np.any(w.data <= 0):
        raise ValueError("pool_score requires strictly positive weights")
    return weighted_mean(w, q)


def forward_image(quads: list[PatchQuad], params: ParameterSet, cfg: NetworkConfig) -> ForwardOutput:
    """Run all subnets over an image's patch quads and pool one score.

    Quads are processed in canonical origin order, so the result is
    bit-identical under any permutation of the input (quads of one image
    that share an origin also share content).
    """
    if not quads:
        raise ValueError("forward_image requires at least one patch quad")
    quads = sorted(quads, key=lambda q: q.origin)
    ref = Tensor(np.stack([q.ref_patch for q in quads]))
    dst = Tensor(np.stack([q.dst_patch for q in quads]))
    f_sal1 = f_sal2 = None
    if cfg.enable_saliency_fusion:
        sal = Tensor(np.stack([q.sal_patch for q in quads]))
        f_sal1, f_sal2 = sal_subnet(sal, params, cfg)
    f_ref = img_subnet(ref, f_sal1, f_sal2, params, cfg)
    f_dst = img_subnet(dst, f_sal1, f_sal2, params, cfg)
    f_jnd = None
    if cfg.enable_jnd:
        jnd = Tensor(np.stack([q.jnd_patch for q in quads]))
        f_jnd = jnd_subnet(jnd, f_sal1, f_sal2, params, cfg)
    fused = fuse(f_ref, f_dst, f_jnd)
    w, q = heads(fused, params, cfg)
    score = pool_score(w, q)
    return ForwardOutput(weights=w, qualities=q, score=score, origins=[qd.origin for qd in quads])
