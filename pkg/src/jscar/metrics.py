"""Correlation statistics and patch-map rendering for model evaluation.

SRCC uses average ranks for ties, KRCC is tie-corrected (tau-b), and
PLCC is raw Pearson by default with an optional four-parameter logistic
pre-fit behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _check_pair(x, y, name: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"{name}: expected equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise ValueError(f"{name}: need at least 3 samples, got {x.size}")
    return x, y


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(x, y, logistic_fit: bool = False) -> float:
    """Pearson linear correlation; optional 4-parameter logistic pre-map of x."""
    x, y = _check_pair(x, y, "plcc")
    if logistic_fit:
        x = fit_logistic(x, y)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        raise ValueError("plcc: an input vector has zero variance")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def srcc(x, y) -> float:
    """Spearman rank-order correlation (Pearson over average ranks)."""
    x, y = _check_pair(x, y, "srcc")
    rx, ry = _average_ranks(x), _average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValueError("srcc: constant input vector has no rank order")
    return plcc(rx, ry)


def krcc(x, y) -> float:
    """Kendall tau-b with tie correction."""
    x, y = _check_pair(x, y, "krcc")
    n = x.size
    concordant = discordant = 0
    for i in range(n - 1):
        dx = x[i + 1 :] - x[i]
        dy = y[i + 1 :] - y[i]
        prod = dx * dy
        concordant += int((prod > 0).sum())
        discordant += int((prod < 0).sum())
    n0 = n * (n - 1) // 2
    tie_x = _tie_pairs(x)
    tie_y = _tie_pairs(y)
    denom = np.sqrt(float(n0 - tie_x) * float(n0 - tie_y))
    if denom == 0:
        raise ValueError("krcc: an input vector is entirely tied")
    return float((concordant - discordant) / denom)


def _tie_pairs(x: np.ndarray) -> int:
    _, counts = np.unique(x, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def fit_logistic(x: np.ndarray, y: np.ndarray, steps: int = 2000) -> np.ndarray:
    """Least-squares fit of a 4-parameter logistic y ~ L(x), returns L(x).

    A small deterministic Adam loop on the closed-form residual gradient;
    good enough for the monotone score mappings this is used on.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    hi, lo = float(y.max()), float(y.min())
    center = float(np.median(x))
    spread = float(x.std()) or 1.0
    theta = np.array([hi, lo, center, spread])
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, steps + 1):
        a, b, c, d = theta
        z = np.clip((x - c) / d, -60, 60)
        sig = 1.0 / (1.0 + np.exp(-z))
        pred = (a - b) * sig + b
        r = pred - y
        dsig = sig * (1.0 - sig)
        grad = np.array(
            [
                2 * (r * sig).mean(),
                2 * (r * (1 - sig)).mean(),
                2 * (r * (a - b) * dsig * (-1.0 / d)).mean(),
                2 * (r * (a - b) * dsig * (-(x - c) / d**2)).mean(),
            ]
        )
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad**2
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        theta = theta - 0.05 * mh / (np.sqrt(vh) + 1e-8)
        if abs(theta[3]) < 1e-9:
            theta[3] = 1e-9
    a, b, c, d = theta
    z = np.clip((x - c) / d, -60, 60)
    return (a - b) / (1.0 + np.exp(-z)) + b


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------

@dataclass
class EvalReport:
    srcc: float
    plcc: float
    krcc: float
    n: int
    per_type: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a correlation report needs at least 3 samples")
        for name, val in (("srcc", self.srcc), ("plcc", self.plcc), ("krcc", self.krcc)):
            if not -1.0 - 1e-9 <= val <= 1.0 + 1e-9:
                raise ValueError(f"{name}={val} outside [-1, 1]")

    def format_text(self) -> str:
        lines = [
            f"n     {self.n:>8d}",
            f"srcc  {self.srcc:>8.4f}",
            f"plcc  {self.plcc:>8.4f}",
            f"krcc  {self.krcc:>8.4f}",
        ]
        for dist_type in sorted(self.per_type):
            stats = self.per_type[dist_type]
            lines.append(
                f"  [{dist_type}] n={stats['n']:.0f} srcc={stats.get('srcc', float('nan')):.4f}"
            )
        return "\n".join(lines)

    def write_text(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"n: {self.n}\n")
            fh.write(f"srcc: {self.srcc:.6f}\n")
            fh.write(f"plcc: {self.plcc:.6f}\n")
            fh.write(f"krcc: {self.krcc:.6f}\n")
            for dist_type in sorted(self.per_type):
                stats = self.per_type[dist_type]
                pairs = " ".join(f"{k}: {v:.6f}" for k, v in sorted(stats.items()))
                fh.write(f"type {dist_type}: {pairs}\n")


def build_report(predictions, truths, types=None, logistic_fit: bool = False) -> EvalReport:
    """Correlations between predicted and ground-truth scores, with a
    per-distortion-type breakdown where a type has enough samples."""
    x = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truths, dtype=np.float64)
    report = EvalReport(
        srcc=srcc(x, y),
        plcc=plcc(x, y, logistic_fit=logistic_fit),
        krcc=krcc(x, y),
        n=x.size,
    )
    if types is not None:
        for dist_type in sorted(set(types)):
            mask = np.array([t == dist_type for t in types])
            stats: dict[str, float] = {"n": float(mask.sum())}
            if mask.sum() >= 3 and len(set(x[mask])) > 1 and len(set(y[mask])) > 1:
                stats["srcc"] = srcc(x[mask], y[mask])
                stats["plcc"] = plcc(x[mask], y[mask], logistic_fit=logistic_fit)
                stats["krcc"] = krcc(x[mask], y[mask])
            report.per_type[dist_type] = stats
    return report


# ----------------------------------------------------------------------
# checkpoint evaluation
# ----------------------------------------------------------------------

def evaluate(
    checkpoint_path,
    manifest,
    cfg,
    split: str = "test",
    split_plan: dict[str, str] | None = None,
    base_dir=None,
    logistic_fit: bool = False,
    threads: int = 1,
) -> EvalReport:
    """Score every image of a split from its exhaustive tiling and correlate.

    ``cfg`` is the TrainConfig whose network section must match the
    checkpoint (verified through the stored config hash). Ground truth
    is normalized over the full manifest, mirroring training.
    """
    import os

    from .checkpoint import load_checkpoint
    from .dataset import read_manifest, split_by_reference
    from .network import init_network_params
    from .trainer import load_samples, predict_sample_score, verify_config_hash

    if isinstance(manifest, (str, os.PathLike)):
        entries = read_manifest(manifest)
        if base_dir is None:
            from pathlib import Path

            base_dir = Path(manifest).resolve().parent
    else:
        entries = list(manifest)
    if split_plan is None:
        if cfg.split_ratios is None:
            raise ValueError("need either a split plan or split ratios in the config")
        refs = sorted(set(e.reference_path for e in entries))
        split_plan = split_by_reference(refs, cfg.split_ratios, cfg.seed)

    loaded, extras = load_checkpoint(checkpoint_path)
    verify_config_hash(extras, cfg)
    params = init_network_params(cfg.network, cfg.seed)
    params.load_values(loaded)

    samples = [
        s
        for s in load_samples(entries, split_plan, cfg.polarity, base_dir, cfg.mbd_passes, threads)
        if s.split == split
    ]
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    preds = [predict_sample_score(s, params, cfg) for s in samples]
    truths = [s.score for s in samples]
    types = [s.entry.distortion_type for s in samples]
    return build_report(preds, truths, types, logistic_fit=logistic_fit)


# ----------------------------------------------------------------------
# patch quality / weight maps
# ----------------------------------------------------------------------

def emit_patch_maps(forward_output, image_shape: tuple[int, int], patch_size: int = 32):
    """Render per-patch qualities and normalized weights as gray tile maps.

    Requires a forward pass over an exhaustive non-overlapping tiling.
    Values are min-max scaled to 0..255 per map; a constant map renders
    as uniform mid-gray (128). Returns (quality_map, weight_map) arrays
    of size (rows*patch, cols*patch).
    """
    h, w = image_shape
    rows, cols = h // patch_size, w // patch_size
    origins = list(forward_output.origins)
    expected = [(r * patch_size, c * patch_size) for r in range(rows) for c in range(cols)]
    if sorted(origins) != sorted(expected):
        raise ValueError(
            "patch maps require forward output from the exhaustive non-overlapping tiling"
        )
    q = forward_output.qualities.data.astype(np.float64)
    w_hat = forward_output.normalized_weights()

    def render(values) -> np.ndarray:
        lo, hi = values.min(), values.max()
        if hi == lo:
            scaled = np.full(values.shape, 128.0)
        else:
            scaled = 255.0 * (values - lo) / (hi - lo)
        canvas = np.zeros((rows * patch_size, cols * patch_size))
        for (r, c), val in zip(origins, scaled):
            canvas[r : r + patch_size, c : c + patch_size] = val
        return canvas

    return render(q), render(w_hat)
