"""Dataset ingestion: manifests, score normalization, splits, patch quads.

A dataset is described by a UTF-8 CSV manifest with a header row:

    image_id,reference_path,distorted_path,saliency_path,jnd_path,raw_score,distortion_type

``saliency_path`` and ``jnd_path`` may be empty; missing prior maps are
computed on the fly from the images. Splits are assigned per reference
image so that all distorted versions of one reference share a split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

PATCH_SIZE = 32
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class ManifestEntry:
    image_id: str
    reference_path: str
    distorted_path: str
    saliency_path: str | None
    jnd_path: str | None
    raw_score: float
    distortion_type: str

    def __post_init__(self):
        if not self.reference_path or not self.distorted_path:
            raise ValueError(f"entry {self.image_id!r}: image paths must be non-empty")
        self.raw_score = float(self.raw_score)
        if not np.isfinite(self.raw_score):
            raise ValueError(f"entry {self.image_id!r}: raw_score must be finite")


@dataclass
class PatchQuad:
    """Four aligned 32x32 patches cut at one image-grid location."""

    ref_patch: np.ndarray  # (3, 32, 32) in [-0.5, 0.5]
    dst_patch: np.ndarray  # (3, 32, 32) in [-0.5, 0.5]
    sal_patch: np.ndarray  # (1, 32, 32) in [0, 1]
    jnd_patch: np.ndarray  # (1, 32, 32) in [0, 1]
    origin: tuple[int, int]  # (row, col)


MANIFEST_COLUMNS = [
    "image_id",
    "reference_path",
    "distorted_path",
    "saliency_path",
    "jnd_path",
    "raw_score",
    "distortion_type",
]


def read_manifest(path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("image_id", "reference_path", "distorted_path", "raw_score") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest {path} is missing columns: {', '.join(missing)}")
        for row in reader:
            entries.append(
                ManifestEntry(
                    image_id=row["image_id"],
                    reference_path=row["reference_path"],
                    distorted_path=row["distorted_path"],
                    saliency_path=row.get("saliency_path") or None,
                    jnd_path=row.get("jnd_path") or None,
                    raw_score=float(row["raw_score"]),
                    distortion_type=row.get("distortion_type", "") or "unknown",
                )
            )
    if not entries:
        raise ValueError(f"manifest {path} contains no entries")
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow(
                [
                    e.image_id,
                    e.reference_path,
                    e.distorted_path,
                    e.saliency_path or "",
                    e.jnd_path or "",
                    repr(e.raw_score),
                    e.distortion_type,
                ]
            )


# ----------------------------------------------------------------------
# scores
# ----------------------------------------------------------------------

def normalize_scores(raw_scores, polarity: str = "mos") -> np.ndarray:
    """Linear min-max map of raw scores to [0, 9], higher = better.

    ``polarity="dmos"`` flips first (raw DMOS is lower-is-better).
    Raises on a degenerate (constant) score range.
    """
    if polarity not in ("mos", "dmos"):
        raise ValueError(f"polarity must be 'mos' or 'dmos', got {polarity!r}")
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 2:
        raise ValueError("need at least two raw scores")
    if polarity == "dmos":
        raw = -raw
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        raise ValueError("all raw scores are equal; normalized range is degenerate")
    return 9.0 * (raw - lo) / (hi - lo)


# ----------------------------------------------------------------------
# reference-level splits
# ----------------------------------------------------------------------

def split_by_reference(ref_ids, ratios: tuple[int, int, int], seed: int) -> dict[str, str]:
    """Randomly partition reference ids into train/val/test by count.

    Deterministic for a fixed seed; the three counts must exactly cover
    the distinct reference ids.
    """
    unique = sorted(set(ref_ids))
    n_train, n_val, n_test = (int(r) for r in ratios)
    if min(n_train, n_val, n_test) < 0:
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    if n_train + n_val + n_test != len(unique):
        raise ValueError(
            f"ratios {ratios} must sum to the reference count ({len(unique)})"
        )
    order = np.random.default_rng(seed).permutation(len(unique))
    plan: dict[str, str] = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            split = "train"
        elif pos < n_train + n_val:
            split = "val"
        else:
            split = "test"
        plan[unique[idx]] = split
    return plan


def save_split_plan(path, plan: dict[str, str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["reference_id", "split"])
        for ref_id in sorted(plan):
            writer.writerow([ref_id, plan[ref_id]])


def load_split_plan(path) -> dict[str, str]:
    plan: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            split = row["split"]
            if split not in SPLIT_NAMES:
                raise ValueError(f"unknown split label {split!r} in {path}")
            plan[row["reference_id"]] = split
    if not plan:
        raise ValueError(f"split plan {path} is empty")
    return plan


# ----------------------------------------------------------------------
# patch extraction
# ----------------------------------------------------------------------

def rescale_image(img: np.ndarray) -> np.ndarray:
    """Map [0, 255] image values to [-0.5, 0.5] (float32)."""
    return (np.asarray(img, dtype=np.float32) / 255.0) - 0.5


def _to_chw(img: np.ndarray) -> np.ndarray:
    """(H, W) or (H, W, 3) -> (3, H, W); grayscale replicates channels."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        return np.repeat(arr[None, :, :], 3, axis=0)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")


def _check_quad_sources(ref, dst, sal, jnd) -> tuple[int, int]:
    h, w = ref.shape[:2]
    if dst.shape != ref.shape:
        raise ValueError(f"dst dims {dst.shape} do not match ref {ref.shape}")
    for name, arr in (("sal", sal), ("jnd", jnd)):
        if arr.ndim != 2 or arr.shape != (h, w):
            raise ValueError(
                f"{name} map must be single-channel {h}x{w}, got shape {arr.shape}"
            )
    return h, w


def _cut_quad(ref_chw, dst_chw, sal, jnd, row: int, col: int, size: int) -> PatchQuad:
    rs, cs = slice(row, row + size), slice(col, col + size)
    return PatchQuad(
        ref_patch=np.ascontiguousarray(ref_chw[:, rs, cs]),
        dst_patch=np.ascontiguousarray(dst_chw[:, rs, cs]),
        sal_patch=np.ascontiguousarray(sal[None, rs, cs], dtype=np.float32),
        jnd_patch=np.ascontiguousarray(jnd[None, rs, cs], dtype=np.float32),
        origin=(row, col),
    )


def sample_training_quads(
    ref: np.ndarray,
    dst: np.ndarray,
    sal: np.ndarray,
    jnd: np.ndarray,
    n: int = 32,
    seed: int | np.random.SeedSequence = 0,
    patch_size: int = PATCH_SIZE,
) -> list[PatchQuad]:
    """Cut ``n`` aligned quads at uniformly random in-bounds origins."""
    h, w = _check_quad_sources(ref, dst, sal, jnd)
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} is smaller than one {patch_size}x{patch_size} patch")
    ref_chw = _to_chw(rescale_image(ref))
    dst_chw = _to_chw(rescale_image(dst))
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - patch_size + 1, size=n)
    cols = rng.integers(0, w - patch_size + 1, size=n)
    return [
        _cut_quad(ref_chw, dst_chw, sal, jnd, int(r), int(c), patch_size)
        for r, c in zip(rows, cols)
    ]


def tile_validation_quads(
    ref: np.ndarray,
    dst: np.ndarray,
    sal: np.ndarray,
    jnd: np.ndarray,
    patch_size: int = PATCH_SIZE,
) -> list[PatchQuad]:
    """Row-major grid of all non-overlapping quads; remainder pixels drop."""
    h, w = _check_quad_sources(ref, dst, sal, jnd)
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} is smaller than one {patch_size}x{patch_size} patch")
    ref_chw = _to_chw(rescale_image(ref))
    dst_chw = _to_chw(rescale_image(dst))
    quads = []
    for row in range(0, h - patch_size + 1, patch_size):
        for col in range(0, w - patch_size + 1, patch_size):
            quads.append(_cut_quad(ref_chw, dst_chw, sal, jnd, row, col, patch_size))
    return quads
