"""Input validation helpers shared by the estimator and CLI surfaces."""

from __future__ import annotations

import os
from pathlib import Path

from .dataset import ManifestEntry


def as_entry_list(X, y=None) -> list[ManifestEntry]:
    """Coerce estimator input into manifest entries.

    Accepts a manifest CSV path, a sequence of ManifestEntry (``y``
    ignored), or a sequence of (reference_path, distorted_path) pairs
    with ``y`` as their raw scores.
    """
    if isinstance(X, (str, os.PathLike)):
        from .dataset import read_manifest

        return read_manifest(X)
    X = list(X)
    if not X:
        raise ValueError("X is empty")
    if isinstance(X[0], ManifestEntry):
        return X
    if y is None:
        raise ValueError("y (raw scores) is required when X is a list of image-path pairs")
    y = list(y)
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} pairs but y has {len(y)} scores")
    entries = []
    for i, (pair, score) in enumerate(zip(X, y)):
        ref, dst = pair
        entries.append(
            ManifestEntry(
                image_id=Path(str(dst)).stem or f"pair{i}",
                reference_path=str(ref),
                distorted_path=str(dst),
                saliency_path=None,
                jnd_path=None,
                raw_score=float(score),
                distortion_type="unknown",
            )
        )
    return entries


def as_pair_list(X) -> list[tuple[str, str]]:
    """Coerce predict input into (reference_path, distorted_path) pairs."""
    if isinstance(X, (str, os.PathLike)):
        raise ValueError("predict expects a sequence of (reference, distorted) path pairs")
    pairs = []
    for item in X:
        if isinstance(item, ManifestEntry):
            pairs.append((item.reference_path, item.distorted_path))
        else:
            ref, dst = item
            pairs.append((str(ref), str(dst)))
    if not pairs:
        raise ValueError("X is empty")
    return pairs


def auto_split_ratios(n_references: int) -> tuple[int, int, int]:
    """Roughly 60/20/20 by reference with a guaranteed validation image."""
    if n_references < 2:
        raise ValueError("need at least two reference images to form train/val splits")
    val = max(1, round(n_references * 0.2))
    test = max(0, min(round(n_references * 0.2), n_references - val - 1))
    train = n_references - val - test
    return train, val, test
