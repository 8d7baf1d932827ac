"""Named parameter collections and their binary checkpoint format.

Checkpoint layout (little-endian throughout):

    magic   4 bytes  b"JSCR"
    version u32      currently 1
    count   u32      number of entries
    entry:  name_len u16, name utf-8 bytes,
            rank u8, dims rank*u32,
            payload prod(dims) float32 values

Model parameters are stored under their canonical names; bookkeeping
values (config hash, epoch, optimizer moments, ...) travel as extra
entries whose names start with ``meta.`` or ``adam.`` and are split back
out on load. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"JSCR"
FORMAT_VERSION = 1
_RESERVED_PREFIXES = ("meta.", "adam.")


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


class ParameterSet:
    """Ordered, named collection of trainable tensors with gradient slots."""

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self._items:
            raise ValueError(f"duplicate parameter name: {name}")
        if name.startswith(_RESERVED_PREFIXES):
            raise ValueError(f"parameter name {name!r} uses a reserved prefix")
        arr = np.asarray(value)
        if arr.dtype != np.float64:  # float32 unless explicitly shadowing in 64-bit
            arr = arr.astype(np.float32)
        t = Tensor(arr, requires_grad=requires_grad)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items.items())

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def n_scalars(self) -> int:
        """Total count of trainable scalar values."""
        return sum(t.size for t in self._items.values())

    def zero_grads(self) -> None:
        for t in self._items.values():
            t.zero_grad()

    def fill_missing_grads(self) -> None:
        """Give parameters untouched by backward an explicit zero gradient."""
        for t in self._items.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self._items.items():
            out.add(name, t.data.copy(), requires_grad=t.requires_grad)
        return out

    def shadow_copy(self) -> "ParameterSet":
        """Float64 clone for finite-difference gradient checks."""
        out = ParameterSet()
        for name, t in self._items.items():
            out.add(name, t.data.astype(np.float64), requires_grad=True)
        return out

    def load_values(self, other: "ParameterSet") -> None:
        """Overwrite matching parameters in place (shapes must agree)."""
        for name, t in self._items.items():
            if name not in other:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            src = other[name]
            if src.shape != t.shape:
                raise CheckpointError(
                    f"parameter {name!r} shape mismatch: expected {t.shape}, got {src.shape}"
                )
            t.data[...] = src.data


# ----------------------------------------------------------------------
# binary serialization
# ----------------------------------------------------------------------

def _write_entry(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"parameter name too long: {name!r}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim > 0xFF:
        raise CheckpointError(f"rank too large for {name!r}")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f4", copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("unexpected end of checkpoint file")
    return buf


def _read_entry(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank))
    count = int(np.prod(dims)) if dims else 1
    payload = _read_exact(fh, 4 * count)
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return name, arr


def save_checkpoint(path, params: ParameterSet, extras: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters plus optional ``meta.*`` / ``adam.*`` entries."""
    extras = extras or {}
    for key in extras:
        if not key.startswith(_RESERVED_PREFIXES):
            raise CheckpointError(f"extra entry {key!r} must use a meta./adam. prefix")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(params) + len(extras)))
        for name, t in params.items():
            _write_entry(fh, name, t.data)
        for name, arr in extras.items():
            _write_entry(fh, name, np.asarray(arr, dtype=np.float32))


def load_checkpoint(path) -> tuple[ParameterSet, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (parameters, extras)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        params = ParameterSet()
        extras: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, arr = _read_entry(fh)
            if name.startswith(_RESERVED_PREFIXES):
                extras[name] = arr
            else:
                params.add(name, arr)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after final checkpoint entry")
    return params, extras


# ----------------------------------------------------------------------
# exact integer <-> float32 packing for meta entries
# ----------------------------------------------------------------------

def u64_to_limbs(value: int) -> np.ndarray:
    """Split an unsigned 64-bit int into four float32-exact 16-bit limbs."""
    if not 0 <= value < 2**64:
        raise ValueError(f"value out of u64 range: {value}")
    return np.array([(value >> (16 * i)) & 0xFFFF for i in range(4)], dtype=np.float32)


def limbs_to_u64(limbs: np.ndarray) -> int:
    vals = np.asarray(limbs).reshape(-1)
    if vals.size != 4:
        raise ValueError("limb vector must have 4 entries")
    return sum(int(v) << (16 * i) for i, v in enumerate(vals))
