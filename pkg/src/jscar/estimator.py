"""Scikit-learn compatible wrapper around the full training pipeline.

``QualityScoreRegressor`` exposes the usual estimator surface
(``get_params``/``set_params``/``fit``/``predict``) so the model drops
into sklearn tooling; internally it builds a TrainConfig and delegates
to the trainer. ``score`` reports rank correlation, the standard figure
of merit for quality prediction (not R^2).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_entry_list, as_pair_list, auto_split_ratios
from .config import TrainConfig
from .checkpoint import load_checkpoint
from .losses import LossWeights
from .metrics import srcc
from .network import NetworkConfig, count_parameters, init_network_params
from .trainer import ImageSample, load_sample, predict_sample_score, fit as trainer_fit
from .dataset import ManifestEntry


class QualityScoreRegressor(BaseEstimator, RegressorMixin):
    """Full-reference image quality model with an sklearn estimator API.

    ``fit`` accepts a manifest CSV path, a list of ManifestEntry, or a
    sequence of (reference_path, distorted_path) pairs plus raw scores
    in ``y``. ``predict`` scores (reference, distorted) path pairs.
    """

    def __init__(
        self,
        stem_channels: int = 32,
        stage_channels: tuple = (64, 128, 256, 512),
        sal_channels: int = 32,
        ca_ratio: int = 16,
        split_count: int = 32,
        head_hidden: int = 512,
        leaky_slope: float = 0.2,
        patch_size: int = 32,
        enable_ca: bool = True,
        enable_saliency_fusion: bool = True,
        enable_skips: bool = True,
        enable_split: bool = True,
        enable_jnd: bool = True,
        alpha: float = 1.0,
        beta: float = 10.0,
        gamma: float = 1.0,
        rank_eps: float = 1e-6,
        batch_size: int = 4,
        patches_per_image: int = 32,
        max_epochs: int = 1000,
        learning_rate: float = 1e-4,
        polarity: str = "mos",
        resample_each_epoch: bool = True,
        mbd_passes: int = 4,
        split_ratios: tuple | None = None,
        seed: int = 0,
        work_dir: str | None = None,
    ):
        self.stem_channels = stem_channels
        self.stage_channels = stage_channels
        self.sal_channels = sal_channels
        self.ca_ratio = ca_ratio
        self.split_count = split_count
        self.head_hidden = head_hidden
        self.leaky_slope = leaky_slope
        self.patch_size = patch_size
        self.enable_ca = enable_ca
        self.enable_saliency_fusion = enable_saliency_fusion
        self.enable_skips = enable_skips
        self.enable_split = enable_split
        self.enable_jnd = enable_jnd
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.rank_eps = rank_eps
        self.batch_size = batch_size
        self.patches_per_image = patches_per_image
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.polarity = polarity
        self.resample_each_epoch = resample_each_epoch
        self.mbd_passes = mbd_passes
        self.split_ratios = split_ratios
        self.seed = seed
        self.work_dir = work_dir

    # ------------------------------------------------------------------
    def build_train_config(self) -> TrainConfig:
        return TrainConfig(
            network=NetworkConfig(
                stem_channels=self.stem_channels,
                stage_channels=tuple(self.stage_channels),
                sal_channels=self.sal_channels,
                ca_ratio=self.ca_ratio,
                split_count=self.split_count,
                head_hidden=self.head_hidden,
                leaky_slope=self.leaky_slope,
                patch_size=self.patch_size,
                enable_ca=self.enable_ca,
                enable_saliency_fusion=self.enable_saliency_fusion,
                enable_skips=self.enable_skips,
                enable_split=self.enable_split,
                enable_jnd=self.enable_jnd,
            ),
            losses=LossWeights(
                alpha=self.alpha, beta=self.beta, gamma=self.gamma, rank_eps=self.rank_eps
            ),
            batch_size=self.batch_size,
            patches_per_image=self.patches_per_image,
            max_epochs=self.max_epochs,
            learning_rate=self.learning_rate,
            seed=self.seed,
            polarity=self.polarity,
            resample_each_epoch=self.resample_each_epoch,
            mbd_passes=self.mbd_passes,
            split_ratios=self.split_ratios,
        )

    def fit(self, X, y=None):
        entries = as_entry_list(X, y)
        cfg = self.build_train_config()
        if cfg.split_ratios is None:
            n_refs = len(set(e.reference_path for e in entries))
            cfg.split_ratios = auto_split_ratios(n_refs)
        work_dir = self.work_dir or tempfile.mkdtemp(prefix="jscar_fit_")
        base_dir = Path(X).resolve().parent if isinstance(X, (str, os.PathLike)) else None
        checkpoint_path = trainer_fit(cfg, entries, work_dir, base_dir=base_dir)
        params, _ = load_checkpoint(checkpoint_path)
        template = init_network_params(cfg.network, cfg.seed)
        template.load_values(params)
        self.config_ = cfg
        self.params_ = template
        self.checkpoint_path_ = checkpoint_path
        self.n_parameters_ = count_parameters(template)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        pairs = as_pair_list(X)
        scores = []
        for ref, dst in pairs:
            entry = ManifestEntry(
                image_id=Path(dst).stem,
                reference_path=ref,
                distorted_path=dst,
                saliency_path=None,
                jnd_path=None,
                raw_score=0.0,
                distortion_type="unknown",
            )
            sample = load_sample(entry, 0.0, "test", mbd_passes=self.mbd_passes)
            scores.append(predict_sample_score(sample, self.params_, self.config_))
        return np.asarray(scores, dtype=np.float64)

    def predict_sample(self, sample: ImageSample) -> float:
        """Score an already-loaded sample (images plus prior maps)."""
        check_is_fitted(self, "params_")
        return predict_sample_score(sample, self.params_, self.config_)

    def score(self, X, y) -> float:
        """Spearman rank correlation between predictions and raw scores."""
        preds = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        if self.polarity == "dmos":
            y = -y
        return srcc(preds, y)
