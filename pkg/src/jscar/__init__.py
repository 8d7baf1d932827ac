"""Full-reference image quality scoring guided by saliency and
just-noticeable-difference priors: prior-map computation, a trainable
patch-based scoring network with channel attention and split
convolutions, rank-aware training, and correlation-metric evaluation.
"""

from .checkpoint import ParameterSet, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_train_config
from .dataset import ManifestEntry, PatchQuad, normalize_scores, split_by_reference
from .estimator import QualityScoreRegressor
from .losses import LossWeights
from .metrics import EvalReport, build_report, krcc, plcc, srcc
from .network import NetworkConfig, count_parameters, forward_image, init_network_params
from .optim import Adam
from .priors import (
    JndModelParams,
    compute_jnd_probability,
    compute_saliency_mbd,
    compute_sid_map,
)
from .tensor import Tensor, no_grad
from .trainer import fit, validate

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "EvalReport",
    "JndModelParams",
    "LossWeights",
    "ManifestEntry",
    "NetworkConfig",
    "ParameterSet",
    "PatchQuad",
    "QualityScoreRegressor",
    "Tensor",
    "TrainConfig",
    "build_report",
    "compute_jnd_probability",
    "compute_saliency_mbd",
    "compute_sid_map",
    "count_parameters",
    "fit",
    "forward_image",
    "init_network_params",
    "krcc",
    "load_checkpoint",
    "load_train_config",
    "no_grad",
    "normalize_scores",
    "plcc",
    "save_checkpoint",
    "split_by_reference",
    "srcc",
    "validate",
    "__version__",
]
