"""End-to-end training: quad batching, loss assembly, Adam, validation.

One optimization step consumes a batch of distorted images (default 4).
Each image contributes its sampled patch quads; the pooled per-image
scores feed the absolute-error and rank terms, and each image's patch
weights are pulled toward its saliency distribution. Validation scores
every image from the exhaustive non-overlapping tiling and reports mean
absolute error only. The best-validation checkpoint is kept.

Randomness is organized as per-(seed, epoch, image) streams so runs are
reproducible and resumable regardless of scheduling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import ParameterSet, load_checkpoint, save_checkpoint, u64_to_limbs, limbs_to_u64
from .config import TrainConfig
from .dataset import (
    ManifestEntry,
    PatchQuad,
    read_manifest,
    normalize_scores,
    sample_training_quads,
    save_split_plan,
    split_by_reference,
    tile_validation_quads,
)
from .losses import batch_rank_loss, mae_loss, saliency_loss, saliency_significance, total_loss
from .network import config_hash, forward_image, init_network_params
from .optim import Adam
from .priors import compute_jnd_probability, compute_saliency_mbd, load_image, load_prior, to_luma
from .tensor import Tensor, no_grad, stack_scalars


class NonFiniteLossError(RuntimeError):
    """A loss component became NaN/Inf; carries the per-component dump."""

    def __init__(self, components: dict[str, float]):
        self.components = components
        dump = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite training loss: {dump}")


@dataclass
class ImageSample:
    """One distorted image with its priors and normalized score."""

    entry: ManifestEntry
    ref: np.ndarray
    dst: np.ndarray
    sal: np.ndarray
    jnd: np.ndarray
    score: float
    split: str


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = float("inf")
    best_path: str = ""
    steps: int = 0
    log_rows: list[tuple] = field(default_factory=list)


# ----------------------------------------------------------------------
# sample loading
# ----------------------------------------------------------------------

def _resolve(path: str, base: Path | None) -> str:
    p = Path(path)
    if base is not None and not p.is_absolute():
        return str(base / p)
    return str(p)


def load_sample(
    entry: ManifestEntry,
    score: float,
    split: str,
    base_dir: Path | None = None,
    mbd_passes: int = 4,
) -> ImageSample:
    """Load one entry's images and obtain its prior maps.

    Prior maps named in the manifest always win; otherwise saliency is
    computed from the reference image and the detection map from the
    reference/distorted pair.
    """
    ref = load_image(_resolve(entry.reference_path, base_dir))
    dst = load_image(_resolve(entry.distorted_path, base_dir))
    if ref.shape != dst.shape:
        raise ValueError(
            f"entry {entry.image_id!r}: reference {ref.shape} and distorted {dst.shape} differ"
        )
    ref_luma = to_luma(ref)
    dst_luma = to_luma(dst)
    if entry.saliency_path:
        sal = load_prior(_resolve(entry.saliency_path, base_dir))
    else:
        sal = compute_saliency_mbd(ref_luma, passes=mbd_passes)
    if entry.jnd_path:
        jnd = load_prior(_resolve(entry.jnd_path, base_dir))
    else:
        jnd = compute_jnd_probability(ref_luma, dst_luma)
    if sal.shape != ref_luma.shape or jnd.shape != ref_luma.shape:
        raise ValueError(f"entry {entry.image_id!r}: prior map dims do not match the image")
    return ImageSample(entry=entry, ref=ref, dst=dst, sal=sal, jnd=jnd, score=score, split=split)


def load_samples(
    entries: list[ManifestEntry],
    plan: dict[str, str],
    polarity: str,
    base_dir: Path | None = None,
    mbd_passes: int = 4,
    threads: int = 1,
) -> list[ImageSample]:
    scores = normalize_scores([e.raw_score for e in entries], polarity)
    jobs = []
    for entry, score in zip(entries, scores):
        if entry.reference_path not in plan:
            raise ValueError(f"split plan has no assignment for reference {entry.reference_path!r}")
        jobs.append((entry, float(score), plan[entry.reference_path]))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: load_sample(*j, base_dir, mbd_passes), jobs))
    return [load_sample(*j, base_dir, mbd_passes) for j in jobs]


# ----------------------------------------------------------------------
# one optimization step
# ----------------------------------------------------------------------

def train_step(
    batch: list[tuple[ImageSample, list[PatchQuad]]],
    params: ParameterSet,
    opt: Adam,
    cfg: TrainConfig,
) -> dict[str, float]:
    """Forward the batch, combine the three losses, apply one Adam update."""
    if len(batch) < 2:
        raise ValueError("a training batch needs at least two images for the rank term")
    weights = cfg.losses
    patch = cfg.network.patch_size

    score_tensors = []
    truths = []
    sal_terms = []
    for sample, quads in batch:
        out = forward_image(quads, params, cfg.network)
        score_tensors.append(out.score)
        truths.append(sample.score)
        if weights.gamma > 0:
            rects = [(r, c, patch, patch) for r, c in out.origins]
            v = saliency_significance(sample.sal, rects)
            sal_terms.append(saliency_loss(out.weights, v))

    l_mae = mae_loss(score_tensors, truths)
    zero = Tensor(np.zeros((), dtype=np.float32))
    l_rank = (
        batch_rank_loss(truths, score_tensors, weights.rank_eps) if weights.beta > 0 else zero
    )
    l_sal = stack_scalars(sal_terms).mean() if sal_terms else zero
    l_tot = total_loss(l_mae, l_rank, l_sal, weights)

    components = {
        "l_mae": l_mae.item(),
        "l_rank": l_rank.item(),
        "l_sal": l_sal.item(),
        "l_tot": l_tot.item(),
    }
    if not all(np.isfinite(v) for v in components.values()):
        raise NonFiniteLossError(components)

    l_tot.backward()
    params.fill_missing_grads()
    opt.step()
    return components


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

def predict_sample_score(sample: ImageSample, params: ParameterSet, cfg: TrainConfig) -> float:
    """Score one image from its exhaustive non-overlapping tiling."""
    quads = tile_validation_quads(
        sample.ref, sample.dst, sample.sal, sample.jnd, patch_size=cfg.network.patch_size
    )
    with no_grad():
        out = forward_image(quads, params, cfg.network)
    return out.score.item()


def validate(params: ParameterSet, cfg: TrainConfig, val_samples: list[ImageSample]) -> float:
    """Mean absolute error over a split, deterministic (no sampling)."""
    if not val_samples:
        raise ValueError("validation split is empty")
    errs = [abs(predict_sample_score(s, params, cfg) - s.score) for s in val_samples]
    return float(np.float32(np.mean(errs)))


# ----------------------------------------------------------------------
# the training loop
# ----------------------------------------------------------------------

def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))


def _quad_seed(seed: int, epoch: int, image_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(epoch), int(image_index)])


def _checkpoint_extras(cfg: TrainConfig, state: TrainState, opt: Adam | None) -> dict[str, np.ndarray]:
    extras = {
        "meta.config_hash": u64_to_limbs(config_hash(cfg.network)),
        "meta.seed": u64_to_limbs(int(cfg.seed)),
        "meta.epoch": np.array([float(state.epoch)], dtype=np.float32),
        "meta.best_val_loss": np.array([np.float32(state.best_val_loss)], dtype=np.float32),
    }
    if opt is not None:
        extras.update(opt.state_entries())
    return extras


def verify_config_hash(extras: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    stored = extras.get("meta.config_hash")
    if stored is None:
        raise ValueError("checkpoint carries no config hash")
    if limbs_to_u64(stored) != config_hash(cfg.network):
        raise ValueError("checkpoint was produced with a different network configuration")


def _write_log(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,l_mae,l_rank,l_sal,l_tot\n")
        for step, _epoch, c in rows:
            fh.write(
                f"{step},{c['l_mae']:.9g},{c['l_rank']:.9g},{c['l_sal']:.9g},{c['l_tot']:.9g}\n"
            )


def fit(
    cfg: TrainConfig,
    manifest,
    out_dir,
    split_plan: dict[str, str] | None = None,
    resume: str | None = None,
    base_dir: Path | None = None,
    threads: int = 1,
) -> str:
    """Train until ``max_epochs``, checkpointing on validation improvements.

    ``manifest`` is a CSV path or a list of ManifestEntry. Returns the
    path of the best checkpoint (the initialized model when max_epochs
    is 0).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if isinstance(manifest, (str, os.PathLike)):
        entries = read_manifest(manifest)
        if base_dir is None:
            base_dir = Path(manifest).resolve().parent
    else:
        entries = list(manifest)

    if split_plan is None:
        if cfg.split_ratios is None:
            raise ValueError("need either a split plan or split ratios in the config")
        ref_ids = [e.reference_path for e in entries]
        split_plan = split_by_reference(sorted(set(ref_ids)), cfg.split_ratios, cfg.seed)
    save_split_plan(out_dir / "split_plan.csv", split_plan)

    samples = load_samples(
        entries, split_plan, cfg.polarity, base_dir, cfg.mbd_passes, threads=threads
    )
    train_samples = [s for s in samples if s.split == "train"]
    val_samples = [s for s in samples if s.split == "val"]
    if len(train_samples) < 2:
        raise ValueError(f"training split has too few images ({len(train_samples)})")
    if not val_samples:
        raise ValueError("validation split is empty")

    params = init_network_params(cfg.network, cfg.seed)
    opt = Adam(params, lr=cfg.learning_rate)
    state = TrainState()

    if resume is not None:
        saved, extras = load_checkpoint(resume)
        verify_config_hash(extras, cfg)
        params.load_values(saved)
        opt.load_state_entries(extras)
        state.epoch = int(extras["meta.epoch"][0])
        state.best_val_loss = float(extras["meta.best_val_loss"][0])
        state.steps = opt.t

    best_path = out_dir / "best.jscr"
    last_path = out_dir / "last.jscr"
    log_path = out_dir / "training_log.csv"

    if resume is None or not best_path.exists():
        # the starting model is the incumbent best artifact
        save_checkpoint(best_path, params, _checkpoint_extras(cfg, state, None))
    state.best_path = str(best_path)

    fixed_quads: dict[int, list[PatchQuad]] | None = None
    start_epoch = state.epoch
    for epoch in range(start_epoch, cfg.max_epochs):
        state.epoch = epoch
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(train_samples))

        if cfg.resample_each_epoch or fixed_quads is None:
            quad_epoch = epoch if cfg.resample_each_epoch else 0
            fixed_quads = {
                int(i): sample_training_quads(
                    train_samples[i].ref,
                    train_samples[i].dst,
                    train_samples[i].sal,
                    train_samples[i].jnd,
                    n=cfg.patches_per_image,
                    seed=_quad_seed(cfg.seed, quad_epoch, int(i)),
                    patch_size=cfg.network.patch_size,
                )
                for i in order
            }

        for lo in range(0, len(order), cfg.batch_size):
            idx = [int(i) for i in order[lo : lo + cfg.batch_size]]
            if len(idx) < 2:
                break  # a trailing single image cannot form rank pairs
            batch = [(train_samples[i], fixed_quads[i]) for i in idx]
            components = train_step(batch, params, opt, cfg)
            state.steps += 1
            state.log_rows.append((state.steps, epoch, components))

        val_loss = validate(params, cfg, val_samples)
        state.epoch = epoch + 1
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            save_checkpoint(best_path, params, _checkpoint_extras(cfg, state, None))
            state.best_path = str(best_path)
        save_checkpoint(last_path, params, _checkpoint_extras(cfg, state, opt))
        _write_log(log_path, state.log_rows)

    _write_log(log_path, state.log_rows)
    return state.best_path
