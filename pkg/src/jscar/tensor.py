"""Dense float tensors with reverse-mode automatic differentiation.

Everything here is numpy-backed and define-by-run: each operation that
produces a tensor records its parents and a vector-Jacobian closure, and
``Tensor.backward()`` replays those closures in reverse topological order.
Training runs in float32; gradient-check tests build the same graphs in
float64 ("shadow mode") for precise finite-difference comparison.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """N-dimensional float array plus autodiff bookkeeping.

    ``data`` is the value (row-major numpy array, float32 or float64),
    ``grad`` is filled by ``backward()`` for every tensor on a path to the
    output that requires grad. Tensors are treated as immutable once
    produced by an op; optimizers mutate leaf ``data`` in place between
    forward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        """Wrap an op result; ``vjp(gout)`` must return one grad per parent."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Reverse-mode pass from a scalar output.

        Visits each recorded node exactly once in reverse topological
        order, accumulating into ``.grad``. Tensors not on any path to
        this output keep ``grad is None`` (i.e. exactly zero).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # grads are never mutated in place, so aliasing a view is safe
                parent.grad = g if parent.grad is None else parent.grad + g

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def _promote(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._promote(other)
        out = self.data + other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor.from_op(out, (self, other), vjp)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._promote(other)
        out = self.data - other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor.from_op(out, (self, other), vjp)

    def __rsub__(self, other):
        return self._promote(other).__sub__(self)

    def __mul__(self, other):
        other = self._promote(other)
        out = self.data * other.data
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)

        return Tensor.from_op(out, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._promote(other)
        out = self.data / other.data
        a, b = self.data, other.data

        def vjp(g):
            return (
                _unbroadcast(g / b, self.shape),
                _unbroadcast(-g * a / (b * b), other.shape),
            )

        return Tensor.from_op(out, (self, other), vjp)

    def __rtruediv__(self, other):
        return self._promote(other).__truediv__(self)

    def __neg__(self):
        out = -self.data

        def vjp(g):
            return (-g,)

        return Tensor.from_op(out, (self,), vjp)

    def abs(self) -> "Tensor":
        """Elementwise |x|; subgradient 0 at x == 0."""
        out = np.abs(self.data)
        sign = np.sign(self.data)

        def vjp(g):
            return (g * sign,)

        return Tensor.from_op(out, (self,), vjp)

    def sum(self) -> "Tensor":
        out = np.asarray(self.data.sum(), dtype=self.data.dtype)
        shape = self.shape

        def vjp(g):
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)

        return Tensor.from_op(out, (self,), vjp)

    def mean(self) -> "Tensor":
        n = self.data.size
        out = np.asarray(self.data.mean(), dtype=self.data.dtype)
        shape = self.shape

        def vjp(g):
            return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=False),)

        return Tensor.from_op(out, (self,), vjp)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = self.data.reshape(shape)

        def vjp(g):
            return (g.reshape(old),)

        return Tensor.from_op(out, (self,), vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# activations and elementwise maps
# ----------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); gradient is ``slope`` where x <= 0."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * x.data.dtype.type(slope))

    def vjp(g):
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return Tensor.from_op(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data.dtype.type(0))

    def vjp(g):
        return (np.where(pos, g, g.dtype.type(0)),)

    return Tensor.from_op(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable 1 / (1 + exp(-x))."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    sig = np.empty_like(d)
    pos = d >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    sig[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * sig,)

    return Tensor.from_op(out, (x,), vjp)


def elementwise_add(x: Tensor, y: Tensor) -> Tensor:
    _check_same_shape("elementwise_add", x, y)
    return x + y


def elementwise_sub(x: Tensor, y: Tensor) -> Tensor:
    _check_same_shape("elementwise_sub", x, y)
    return x - y


def mul_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """Scale every spatial position of channel c in NCHW ``x`` by ``s[n, c]``."""
    if x.ndim != 4 or s.ndim != 2 or x.shape[:2] != s.shape:
        raise ValueError(
            f"mul_broadcast expects x NCHW and s NC with matching N,C; got {x.shape} and {s.shape}"
        )
    s4 = s.data[:, :, None, None]
    out = x.data * s4
    xd = x.data

    def vjp(g):
        return g * s4, (g * xd).sum(axis=(2, 3))

    return Tensor.from_op(out, (x, s), vjp)


def _check_same_shape(op: str, x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ValueError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    if not xs:
        raise ValueError("concat_channels: empty input")
    first = xs[0]
    for t in xs[1:]:
        if t.ndim != first.ndim or t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ValueError(
                f"concat_channels: non-channel dims differ, {first.shape} vs {t.shape}"
            )
    if len(xs) == 1:
        x = xs[0]

        def vjp_one(g):
            return (g,)

        return Tensor.from_op(x.data, (x,), vjp_one)
    out = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=1))

    return Tensor.from_op(out, tuple(xs), vjp)


def concat_vectors(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate (N, D_i) tensors along the feature axis."""
    if not xs:
        raise ValueError("concat_vectors: empty input")
    n = xs[0].shape[0]
    for t in xs:
        if t.ndim != 2 or t.shape[0] != n:
            raise ValueError(f"concat_vectors: expected (N, D) with N={n}, got {t.shape}")
    out = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=1))

    return Tensor.from_op(out, tuple(xs), vjp)


# ----------------------------------------------------------------------
# convolution / pooling / dense
# ----------------------------------------------------------------------

def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int | None = None,
    groups: int = 1,
) -> Tensor:
    """2-D convolution on NCHW input.

    ``w`` has shape (O, I/groups, k, k) with k in {1, 3}. The default
    padding k//2 preserves spatial size at stride 1 and yields
    ceil(H/stride) x ceil(W/stride) at stride 2. Lowered to a single
    matmul per group via im2col; the input gradient is re-scattered with
    at most k*k strided adds, so everything stays deterministic.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d: weight must be (O, I, k, k), got {w.shape}")
    n, c, h, wd = x.shape
    o, ig, k, _ = w.shape
    if k not in (1, 3):
        raise ValueError(f"conv2d: kernel size must be 1 or 3, got {k}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if c % groups or o % groups:
        raise ValueError(f"conv2d: channels {c}->{o} not divisible by groups={groups}")
    if ig != c // groups:
        raise ValueError(
            f"conv2d: input channel axis mismatch, x has {c} channels over {groups} group(s) "
            f"but weight expects {ig} per group"
        )
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias must have shape ({o},), got {bias.shape}")
    if pad is None:
        pad = k // 2

    out, cols = _conv_core(x.data, w.data, groups, stride, pad)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def vjp(g):
        gout = g.transpose(1, 0, 2, 3).reshape(groups, o // groups, -1)
        gw = np.matmul(gout, cols.transpose(0, 2, 1)).reshape(w.shape)
        if stride == 1:
            # correlate the output gradient with the flipped kernels
            wt = np.ascontiguousarray(
                w.data.reshape(groups, o // groups, ig, k, k)[:, :, :, ::-1, ::-1]
                .transpose(0, 2, 1, 3, 4)  # G, I/G, O/G, k, k
                .reshape(c, o // groups, k, k)
            )
            gx, _ = _conv_core(np.ascontiguousarray(g), wt, groups, 1, k - 1 - pad)
        else:
            gx = _scatter_conv_grad(g, w.data, (n, c, h, wd), groups, stride, pad)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, w, bias) if bias is not None else (x, w)
    if bias is None:
        return Tensor.from_op(out, parents, lambda g: vjp(g)[:2])
    return Tensor.from_op(out, parents, vjp)


def _conv_core(xd: np.ndarray, wd: np.ndarray, groups: int, stride: int, pad: int):
    """im2col + one batched matmul; returns (output NCHW, columns)."""
    n, c, h, wid = xd.shape
    o, ig, k, _ = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N, C, Ho, Wo, k, k
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3))
    cols = cols.reshape(groups, ig * k * k, n * ho * wo)
    wg = wd.reshape(groups, o // groups, ig * k * k)
    out = np.matmul(wg, cols).reshape(o, n, ho, wo)
    return np.ascontiguousarray(out.swapaxes(0, 1)), cols


def _scatter_conv_grad(g, wd, x_shape, groups, stride, pad):
    """Input gradient by scattering column gradients (strided convs)."""
    n, c, h, wid = x_shape
    o, ig, k, _ = wd.shape
    ho, wo = g.shape[2], g.shape[3]
    hp, wp = h + 2 * pad, wid + 2 * pad
    gout = g.transpose(1, 0, 2, 3).reshape(groups, o // groups, -1)
    wg = wd.reshape(groups, o // groups, ig * k * k)
    gcols = np.matmul(wg.transpose(0, 2, 1), gout).reshape(c, k, k, n, ho, wo)
    gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                gcols[:, i, j].transpose(1, 0, 2, 3)
            )
    return gxp[:, :, pad : pad + h, pad : pad + wid] if pad else gxp


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2.

    The gradient routes to the window argmax; ties go to the first
    element in row-major window order.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool2: input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    d = x.data
    # the four window corners as strided views, in row-major window order
    corners = (d[:, :, 0::2, 0::2], d[:, :, 0::2, 1::2], d[:, :, 1::2, 0::2], d[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))

    def vjp(g):
        gx = np.empty((n, c, h, w), dtype=g.dtype)
        taken = np.zeros(out.shape, dtype=bool)  # earlier corner already won the tie
        slots = ((0, 0), (0, 1), (1, 0), (1, 1))
        for corner, (i, j) in zip(corners, slots):
            hit = (corner == out) & ~taken
            gx[:, :, i::2, j::2] = np.where(hit, g, 0)
            taken |= hit
        return (gx,)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: NCHW -> NC."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool: input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).astype(g.dtype, copy=False),)

    return Tensor.from_op(out, (x,), vjp)


def fully_connected(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Affine map (N, D) @ (D', D)^T + (D',)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(
            f"fully_connected: inner dims must match, x {x.shape} vs w {w.shape}"
        )
    if bias.shape != (w.shape[0],):
        raise ValueError(f"fully_connected: bias must have shape ({w.shape[0]},), got {bias.shape}")
    if w.shape[0] == 1:
        # keep each row's reduction independent of its batch position: the
        # BLAS gemv this would otherwise hit rounds differently per row
        out = (x.data * w.data[0]).sum(axis=1)[:, None] + bias.data
    else:
        out = x.data @ w.data.T + bias.data
    xd, wd = x.data, w.data

    def vjp(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return Tensor.from_op(out, (x, w, bias), vjp)


def flatten_features(x: Tensor) -> Tensor:
    """NCHW -> (N, C*H*W), row-major."""
    n = x.shape[0]
    return x.reshape(n, -1)


def weighted_mean(w: Tensor, q: Tensor) -> Tensor:
    """Normalized weighted average sum_i (w_i / sum_j w_j) * q_i.

    Forward accumulation uses exact float summation (math.fsum), so the
    result is bit-identical under any permutation of the entries.
    """
    if w.ndim != 1 or q.ndim != 1 or w.shape != q.shape:
        raise ValueError(f"weighted_mean: expected equal-length vectors, got {w.shape} and {q.shape}")
    if w.size == 0:
        raise ValueError("weighted_mean: empty input")
    wd = w.data.astype(np.float64)
    qd = q.data.astype(np.float64)
    total = math.fsum(wd)
    if total <= 0.0:
        raise ValueError("weighted_mean: weights must sum to a positive value")
    s = math.fsum(wd * qd) / total
    out = np.asarray(s, dtype=w.data.dtype)

    def vjp(g):
        gs = float(g)
        gw = (gs * (qd - s) / total).astype(w.data.dtype)
        gq = (gs * wd / total).astype(q.data.dtype)
        return gw, gq

    return Tensor.from_op(out, (w, q), vjp)


def stack_scalars(xs: Sequence[Tensor]) -> Tensor:
    """Join scalar tensors into a rank-1 tensor (for batch losses)."""
    if not xs:
        raise ValueError("stack_scalars: empty input")
    for t in xs:
        if t.size != 1:
            raise ValueError(f"stack_scalars: inputs must be scalars, got shape {t.shape}")
    out = np.stack([t.data.reshape(()) for t in xs])

    def vjp(g):
        return tuple(g[i].reshape(xs[i].shape) for i in range(len(xs)))

    return Tensor.from_op(out, tuple(xs), vjp)


# ----------------------------------------------------------------------
# finite-difference gradient checking (64-bit shadow mode)
# ----------------------------------------------------------------------

def gradcheck(
    build: Callable[[], Tensor],
    wiggle: Sequence[Tensor],
    h: float = 1e-4,
    rtol: float = 1e-3,
    max_coords: int = 48,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of ``build()`` against central differences.

    ``build`` must return a scalar Tensor computed from the float64
    tensors listed in ``wiggle``. At most ``max_coords`` coordinates per
    tensor are probed (chosen by ``rng``). Returns the worst relative
    error and raises AssertionError if it exceeds ``rtol``.
    """
    rng = rng or np.random.default_rng(0)
    for t in wiggle:
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 tensors (shadow mode)")
        t.zero_grad()
    out = build()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wiggle]

    worst = 0.0
    for t, ga in zip(wiggle, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + h
                fp = build().item()
                flat[c] = orig - h
                fm = build().item()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = ga.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
            if err > rtol:
                raise AssertionError(
                    f"gradient mismatch at coord {c} of tensor shape {t.shape}: "
                    f"analytic {a:.6e} vs numeric {numeric:.6e} (rel err {err:.2e})"
                )
    return worst
