"""Small synthetic datasets for smoke tests and demos.

Generates textured reference images, degrades each with a ladder of
Gaussian blur strengths, assigns raw scores monotone in blur, and writes
images plus a manifest ready for training.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import ManifestEntry, write_manifest
from .priors import save_gray_image


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge padding; works on (H, W) or (H, W, C)."""
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    radius = max(1, int(np.ceil(3 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    out = np.asarray(img, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for i, k in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + out.shape[axis])
            acc += k * padded[tuple(sl)]
        out = acc
    return out


def add_white_noise(img: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.clip(np.asarray(img, dtype=np.float64) + rng.normal(0, sigma, size=np.shape(img)), 0, 255)


def textured_image(size: int, seed: int) -> np.ndarray:
    """Random texture mixing coarse, mid and pixel-scale structure, in [0, 255].

    The mid-scale band matters most for blur ladders: it survives light
    smoothing but is erased by heavy smoothing, so blur levels stay
    distinguishable.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for blur_scale, weight in ((size / 8.0, 0.35), (1.8, 0.4), (0.0, 0.25)):
        c = rng.uniform(-1, 1, size=(size, size))
        if blur_scale:
            c = gaussian_blur(c, blur_scale)
        img += weight * (c - c.min()) / (np.ptp(c) + 1e-12)
    img = (img - img.min()) / (np.ptp(img) + 1e-12)
    return 20.0 + 215.0 * img


def make_blur_ladder_dataset(
    out_dir,
    n_references: int = 4,
    sigmas: tuple[float, ...] = (0.4, 1.0, 3.0),
    size: int = 32,
    seed: int = 0,
    ref_jitter: float = 0.05,
) -> str:
    """Write references x blur levels and a manifest; returns the manifest path.

    Raw scores decrease with blur strength and carry a small per-reference
    offset (``ref_jitter`` raw units per reference index) so all scores are
    distinct, which keeps rank statistics clean. Patch-sized images (the
    32 default) make the sampled training view coincide with the
    evaluation tiling, which is what a memorization experiment wants.
    """
    out_dir = Path(out_dir).resolve()  # absolute paths keep the manifest usable from any cwd
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for r in range(n_references):
        ref = textured_image(size, seed=seed * 1000 + r)
        ref_path = out_dir / "images" / f"ref{r}.png"
        save_gray_image(ref_path, ref)
        for level, sigma in enumerate(sigmas):
            dst = np.clip(gaussian_blur(ref, sigma), 0, 255)
            dst_path = out_dir / "images" / f"ref{r}_blur{level}.png"
            save_gray_image(dst_path, dst)
            entries.append(
                ManifestEntry(
                    image_id=f"ref{r}_blur{level}",
                    reference_path=str(ref_path),
                    distorted_path=str(dst_path),
                    saliency_path=None,
                    jnd_path=None,
                    raw_score=-(sigma + ref_jitter * r),
                    distortion_type="blur",
                )
            )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, entries)
    return str(manifest_path)
