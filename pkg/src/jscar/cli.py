"""Command-line entry point.

Subcommands: priors, split, train, predict, eval, maps, params.
Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.
All outputs land under --out-dir (default ./out). JSCR_SEED in the
environment seeds commands that take no explicit --seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_seed() -> int:
    return int(os.environ.get("JSCR_SEED", "0"))


def _build_parser() -> _Parser:
    parser = _Parser(prog="jscar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("priors", help="emit saliency / detection-probability / difference maps")
    p.add_argument("ref")
    p.add_argument("dst", nargs="?")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--passes", type=int, default=4)

    p = sub.add_parser("split", help="assign references to train/val/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", required=True, help="train,val,test reference counts")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-plan", default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("predict", help="score one distorted image against its reference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--ref", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--sal", default=None)
    p.add_argument("--jnd", default=None)

    p = sub.add_parser("eval", help="correlation metrics of a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--split-plan", default=None)
    p.add_argument("--logistic-fit", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("maps", help="emit patch quality and weight maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--ref", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--sal", default=None)
    p.add_argument("--jnd", default=None)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("params", help="print the trainable parameter count")
    p.add_argument("--config", default="default")
    return parser


# ----------------------------------------------------------------------
# command bodies
# ----------------------------------------------------------------------

def _cmd_priors(args) -> int:
    from .priors import (
        compute_jnd_probability,
        compute_saliency_mbd,
        compute_sid_map,
        load_image,
        save_prior,
        to_luma,
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = to_luma(load_image(args.ref))
    stem = Path(args.ref).stem
    save_prior(out_dir / f"{stem}.sal.png", compute_saliency_mbd(ref, passes=args.passes))
    if args.dst is not None:
        dst = to_luma(load_image(args.dst))
        stem = Path(args.dst).stem
        save_prior(out_dir / f"{stem}.jnd.png", compute_jnd_probability(ref, dst))
        save_prior(out_dir / f"{stem}.sid.png", compute_sid_map(ref, dst))
    print(f"priors written to {out_dir}")
    return 0


def _cmd_split(args) -> int:
    from .dataset import read_manifest, save_split_plan, split_by_reference

    ratios = tuple(int(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise _UsageError("--ratios must be three comma-separated counts")
    seed = args.seed if args.seed is not None else _default_seed()
    entries = read_manifest(args.manifest)
    refs = sorted(set(e.reference_path for e in entries))
    plan = split_by_reference(refs, ratios, seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "split_plan.csv"
    save_split_plan(path, plan)
    print(f"split plan written to {path}")
    return 0


def _cmd_train(args) -> int:
    from .config import load_train_config
    from .dataset import load_split_plan
    from .trainer import fit

    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    elif "JSCR_SEED" in os.environ:
        cfg.seed = _default_seed()
    plan = load_split_plan(args.split_plan) if args.split_plan else None
    best = fit(
        cfg,
        args.manifest,
        args.out_dir,
        split_plan=plan,
        resume=args.resume,
        threads=args.threads,
    )
    print(f"best checkpoint: {best}")
    return 0


def _load_model(args):
    from .checkpoint import load_checkpoint
    from .config import load_train_config
    from .network import init_network_params
    from .trainer import verify_config_hash

    cfg = load_train_config(args.config)
    loaded, extras = load_checkpoint(args.ckpt)
    verify_config_hash(extras, cfg)
    params = init_network_params(cfg.network, cfg.seed)
    params.load_values(loaded)
    return cfg, params


def _load_pair_sample(args, cfg):
    from .dataset import ManifestEntry
    from .trainer import load_sample

    entry = ManifestEntry(
        image_id=Path(args.dst).stem,
        reference_path=args.ref,
        distorted_path=args.dst,
        saliency_path=args.sal,
        jnd_path=args.jnd,
        raw_score=0.0,
        distortion_type="unknown",
    )
    return load_sample(entry, 0.0, "test", mbd_passes=cfg.mbd_passes)


def _cmd_predict(args) -> int:
    from .trainer import predict_sample_score

    cfg, params = _load_model(args)
    sample = _load_pair_sample(args, cfg)
    score = predict_sample_score(sample, params, cfg)
    print(f"{score:.6f}")
    return 0


def _cmd_eval(args) -> int:
    from .dataset import load_split_plan
    from .metrics import evaluate

    from .config import load_train_config

    cfg = load_train_config(args.config)
    plan = load_split_plan(args.split_plan) if args.split_plan else None
    report = evaluate(
        args.ckpt,
        args.manifest,
        cfg,
        split=args.split,
        split_plan=plan,
        logistic_fit=args.logistic_fit,
        threads=args.threads,
    )
    print(report.format_text())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_text(out_dir / f"eval_{args.split}.txt")
    return 0


def _cmd_maps(args) -> int:
    from .dataset import tile_validation_quads
    from .metrics import emit_patch_maps
    from .network import forward_image
    from .priors import save_gray_image
    from .tensor import no_grad

    cfg, params = _load_model(args)
    sample = _load_pair_sample(args, cfg)
    patch = cfg.network.patch_size
    quads = tile_validation_quads(sample.ref, sample.dst, sample.sal, sample.jnd, patch_size=patch)
    with no_grad():
        out = forward_image(quads, params, cfg.network)
    h, w = sample.sal.shape
    qmap, wmap = emit_patch_maps(out, (h, w), patch_size=patch)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.dst).stem
    save_gray_image(out_dir / f"{stem}.q.png", qmap)
    save_gray_image(out_dir / f"{stem}.w.png", wmap)
    print(f"maps written to {out_dir}")
    return 0


def _cmd_params(args) -> int:
    from .config import load_train_config
    from .network import count_parameters, init_network_params

    cfg = load_train_config(args.config)
    params = init_network_params(cfg.network, cfg.seed)
    print(count_parameters(params))
    return 0


_COMMANDS = {
    "priors": _cmd_priors,
    "split": _cmd_split,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "maps": _cmd_maps,
    "params": _cmd_params,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        from .trainer import NonFiniteLossError

        if isinstance(exc, NonFiniteLossError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, ValueError):
            print(f"usage error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
