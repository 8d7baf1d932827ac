"""Training losses: absolute error, saliency-guided weights, pairwise rank.

All losses return scalar Tensors so they can sit on the autodiff graph;
call ``.item()`` for logging. Ground-truth quantities (subjective scores,
saliency significance targets) enter as plain floats/arrays since no
gradient flows into them.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor import Tensor, relu, stack_scalars


@dataclass
class LossWeights:
    alpha: float = 1.0  # absolute-error term
    beta: float = 10.0  # rank term
    gamma: float = 1.0  # saliency-guidance term
    rank_eps: float = 1e-6

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.rank_eps <= 0:
            raise ValueError("rank_eps must be positive")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ----------------------------------------------------------------------
# saliency guidance
# ----------------------------------------------------------------------

def normalize_weights(w: Tensor) -> Tensor:
    """w_i / sum(w); requires strictly positive entries."""
    w = _as_tensor(w)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"normalize_weights expects a non-empty vector, got shape {w.shape}")
    if np.any(w.data <= 0):
        raise ValueError("normalize_weights requires strictly positive weights")
    return w / w.sum()


def saliency_significance(sal_map: np.ndarray, patch_regions) -> np.ndarray:
    """Share of total map saliency inside each (row, col, h, w) rectangle."""
    sal = np.asarray(sal_map, dtype=np.float64)
    if sal.ndim != 2:
        raise ValueError(f"saliency map must be 2-D, got shape {sal.shape}")
    total = sal.sum()
    if total <= 0:
        raise ValueError("saliency map sums to zero; significance is undefined")
    height, width = sal.shape
    out = np.empty(len(patch_regions), dtype=np.float64)
    for i, (row, col, h, w) in enumerate(patch_regions):
        if row < 0 or col < 0 or row + h > height or col + w > width:
            raise ValueError(f"patch region {(row, col, h, w)} exceeds map bounds {sal.shape}")
        out[i] = sal[row : row + h, col : col + w].sum() / total
    return out


def saliency_loss(w: Tensor, v: np.ndarray) -> Tensor:
    """Mean absolute gap between normalized patch weights and saliency shares."""
    w = _as_tensor(w)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or w.shape != v.shape:
        raise ValueError(f"length mismatch: weights {w.shape} vs significance {v.shape}")
    target = Tensor(v.astype(w.data.dtype))
    return (normalize_weights(w) - target).abs().mean()


# ----------------------------------------------------------------------
# rank loss
# ----------------------------------------------------------------------

def pairwise_rank_loss(s_x: float, s_y: float, f_x, f_y, eps: float = 1e-6) -> Tensor:
    """Hinge on discordant score pairs.

    Zero whenever the predicted difference agrees in sign with the
    ground-truth difference (or either is zero); otherwise approaches
    |f_x - f_y| from below as eps shrinks.
    """
    f_x, f_y = _as_tensor(f_x), _as_tensor(f_y)
    ds = float(s_x) - float(s_y)
    scale = -ds / (abs(ds) + float(eps))
    return relu((f_x - f_y) * scale)


def batch_rank_loss(scores, preds, eps: float = 1e-6) -> Tensor:
    """Sum of the pairwise hinge over all unordered prediction pairs."""
    n = len(scores)
    if n != len(preds):
        raise ValueError(f"length mismatch: {n} scores vs {len(preds)} predictions")
    if n < 2:
        raise ValueError("rank loss needs a batch of at least two images")
    terms = [
        pairwise_rank_loss(scores[i], scores[j], preds[i], preds[j], eps)
        for i, j in combinations(range(n), 2)
    ]
    return stack_scalars(terms).sum()


# ----------------------------------------------------------------------
# absolute error and the combined objective
# ----------------------------------------------------------------------

def mae_loss(preds, truths) -> Tensor:
    """Mean absolute prediction error over a batch."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("mae_loss requires at least one prediction")
    diffs = [(_as_tensor(p) - float(t)).abs() for p, t in zip(preds, truths)]
    return stack_scalars(diffs).mean()


def total_loss(l_mae, l_rank, l_sal, weights: LossWeights | None = None) -> Tensor:
    """alpha * MAE + beta * rank + gamma * saliency."""
    weights = weights or LossWeights()
    return (
        _as_tensor(l_mae) * weights.alpha
        + _as_tensor(l_rank) * weights.beta
        + _as_tensor(l_sal) * weights.gamma
    )
