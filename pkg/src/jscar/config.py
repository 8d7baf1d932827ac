"""Run configuration: one flat ``key = value`` text file drives everything.

Lines are ``key = value`` with ``#`` comments and blank lines ignored.
Keys cover the network architecture, loss weights, and the training
loop; unknown keys are rejected so typos fail loudly. The literal name
``default`` stands for the built-in configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .losses import LossWeights
from .network import NetworkConfig


@dataclass
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 4
    patches_per_image: int = 32
    max_epochs: int = 1000
    learning_rate: float = 1e-4
    seed: int = 0
    polarity: str = "mos"  # or "dmos"
    resample_each_epoch: bool = True
    mbd_passes: int = 4
    split_ratios: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (the rank term needs pairs)")
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.polarity not in ("mos", "dmos"):
            raise ValueError(f"polarity must be 'mos' or 'dmos', got {self.polarity!r}")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in raw.split(",") if p.strip())


_NETWORK_KEYS = {f.name for f in fields(NetworkConfig)}
_LOSS_KEYS = {f.name for f in fields(LossWeights)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"network", "losses"}

_BOOL_KEYS = {
    "enable_ca",
    "enable_saliency_fusion",
    "enable_skips",
    "enable_split",
    "enable_jnd",
    "resample_each_epoch",
}
_TUPLE_KEYS = {"stage_channels", "split_ratios"}
_FLOAT_KEYS = {"leaky_slope", "alpha", "beta", "gamma", "rank_eps", "learning_rate"}
_STR_KEYS = {"polarity"}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from ``key = value`` lines."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(key: str, raw: str):
    if key in _BOOL_KEYS:
        return _parse_bool(raw)
    if key in _TUPLE_KEYS:
        return _parse_int_tuple(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _STR_KEYS:
        return raw
    return int(raw)


def train_config_from_items(items: dict[str, str]) -> TrainConfig:
    net_kwargs = {}
    loss_kwargs = {}
    train_kwargs = {}
    for key, raw in items.items():
        if key in _NETWORK_KEYS:
            net_kwargs[key] = _convert(key, raw)
        elif key in _LOSS_KEYS:
            loss_kwargs[key] = _convert(key, raw)
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = _convert(key, raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(
        network=NetworkConfig(**net_kwargs),
        losses=LossWeights(**loss_kwargs),
        **train_kwargs,
    )


def load_train_config(path_or_default: str) -> TrainConfig:
    """Read a config file; the literal string ``default`` gives defaults."""
    if path_or_default == "default":
        return TrainConfig()
    with open(path_or_default, encoding="utf-8") as fh:
        return train_config_from_items(parse_config_text(fh.read()))


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize a config as a parseable ``key = value`` file."""
    lines = ["# network"]
    for f in fields(NetworkConfig):
        value = getattr(cfg.network, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    lines.append("# losses")
    for f in fields(LossWeights):
        lines.append(f"{f.name} = {getattr(cfg.losses, f.name)}")
    lines.append("# training")
    for f in fields(TrainConfig):
        if f.name in ("network", "losses"):
            continue
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
