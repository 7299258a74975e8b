"""Command line: train, eval, ablate, sweep, predict, gen-synthetic.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from . import plotting
from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig, load_config, save_config
from .data import DatasetError, SyntheticSpec, export_heatmap, generate_synthetic, load_labels, load_manifest, read_image
from .losses import EmptyRegionError
from .metrics import MetricError
from .decoder import predict_masks
from .model import _DTYPES, build_encoders
from .trainer import (LAMBDA_GRID, TAU_GRID, TrainingError, evaluate_checkpoint,
                      labels_from_checkpoint, model_from_checkpoint, run_ablation, grid_sweep, train)
from .types import Sample, ValidationError
from .vision import encode_image

log = logging.getLogger("affordmi")

USAGE_ERROR, RUNTIME_ERROR = 1, 2
_OVERRIDES = {"tau1": "tau1", "tau2": "tau2", "lambda1": "lambda1", "lambda2": "lambda2", "lr": "lr",
              "iters": "iterations", "seed": "seed"}
_RUNTIME = (DatasetError, CheckpointError, TrainingError, ValidationError, MetricError, EmptyRegionError,
            OSError, ValueError, RuntimeError)


class UsageError(Exception):
    def __init__(self, message, parser=None):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}", self)


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="flat key = value config file")
    p.add_argument("--root", help="dataset root (defaults to data_root in the config)")
    p.add_argument("--out", help="output path or directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("seen", "unseen"))
    p.add_argument("--one-shot", dest="one_shot", action="store_true", default=None,
                   help="require exactly one training image per object")
    for flag in ("tau1", "tau2", "lambda1", "lambda2", "lr"):
        p.add_argument(f"--{flag}", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affordmi", description="One-shot text-guided affordance grounding.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train and write a checkpoint")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test subset")
    _common(p, config_required=True)
    p.add_argument("--checkpoint", help="checkpoint file (defaults to checkpoint_path in the config)")

    p = sub.add_parser("ablate", help="run the four loss-term ablation rows")
    _common(p)

    p = sub.add_parser("sweep", help="grid sweep over temperatures or loss weights")
    _common(p)
    p.add_argument("--grid", choices=("tau", "lambda"), default="tau")
    p.add_argument("--rows", type=float, nargs="+", help="values for the first key (default: standard grid)")
    p.add_argument("--cols", type=float, nargs="+", help="values for the second key")

    p = sub.add_parser("predict", help="write heatmaps for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--root", help="dataset root; predicts every test image when --image is absent")
    p.add_argument("--image", nargs="+", help="image files to predict")
    p.add_argument("--split", choices=("seen", "unseen"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset tree")
    p.add_argument("--root", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--affordances", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--test-variants", dest="test_variants", type=int, default=2)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    over = {}
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "split", None):
        over["split"] = args.split
    if getattr(args, "one_shot", None):
        over["one_shot"] = True
    if getattr(args, "root", None):
        over["data_root"] = args.root
    return cfg.with_overrides(**over) if over else cfg


def _subset(cfg: TrainConfig, subset: str, labels, one_shot=False, optional=False) -> Optional[List[Sample]]:
    if not cfg.data_root:
        raise UsageError("no dataset root: pass --root or set data_root in the config")
    try:
        return load_manifest(cfg.data_root, cfg.split, one_shot, subset, labels).load_samples()
    except DatasetError:
        if optional:
            return None
        raise


def _load_data(cfg: TrainConfig):
    labels = load_labels(cfg.data_root) if cfg.data_root else None
    train_set = _subset(cfg, "trainset", labels, cfg.one_shot)
    val = _subset(cfg, "valset", labels, optional=True)
    test = _subset(cfg, "testset", labels, optional=True)
    return labels, train_set, val, test


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    labels, data, val, _ = _load_data(cfg)
    enc = build_encoders(cfg.model, cfg.hyper.patch_size)
    ckpt = train(cfg, data, labels, enc, val)
    path = Path(args.out or cfg.checkpoint_path or "affordmi.ckpt")
    ckpt.save(path)
    stem = path.with_suffix("")
    save_config(cfg.with_overrides(checkpoint_path=str(path)), stem.with_name(stem.name + "_config.txt"))
    with open(stem.with_name(stem.name + "_losses.tsv"), "w") as fh:
        fh.write("iteration\tbce\tami\tomi\ttotal\n")
        for i, h in enumerate(ckpt.history, 1):
            fh.write(f"{i}\t{h.bce:.6f}\t{h.ami:.6f}\t{h.omi:.6f}\t{h.total:.6f}\n")
    plotting.loss_curve(ckpt.history, stem.with_name(stem.name + "_losses.png"))
    print(f"checkpoint\t{path}")
    print(f"best_iteration\t{ckpt.iteration}")
    print(f"best_val_kld\t{ckpt.best_val_kld:.6f}")
    print(f"final_train_bce\t{ckpt.summary['final_train_bce']:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    path = args.checkpoint or cfg.checkpoint_path
    if not path:
        raise UsageError("no checkpoint: pass --checkpoint or set checkpoint_path in the config")
    ckpt = Checkpoint.load(path)
    ck_cfg, _ = model_from_checkpoint(ckpt)
    labels = labels_from_checkpoint(ckpt)
    test = _subset(cfg, "testset", labels)
    report = evaluate_checkpoint(ckpt, test, build_encoders(ck_cfg.model, ck_cfg.hyper.patch_size), labels)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    labels, data, val, test = _load_data(cfg)
    enc = build_encoders(cfg.model, cfg.hyper.patch_size)
    rows = run_ablation(cfg, data, labels, enc, val, test)
    out = _out_dir(args, "ablation")
    lines = ["losses\tami\tomi\tkld\tsim\tnss"]
    for r in rows:
        lines.append(f"{r.name}\t{int(r.enable_ami)}\t{int(r.enable_omi)}\t"
                     f"{r.report.kld:.6f}\t{r.report.sim:.6f}\t{r.report.nss:.6f}")
    text = "\n".join(lines) + "\n"
    (out / "ablation.tsv").write_text(text)
    plotting.ablation_bars([(r.name, r.report) for r in rows], out / "ablation.png")
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    labels, data, val, test = _load_data(cfg)
    enc = build_encoders(cfg.model, cfg.hyper.patch_size)
    keys = ("tau1", "tau2") if args.grid == "tau" else ("lambda1", "lambda2")
    grid = TAU_GRID if args.grid == "tau" else LAMBDA_GRID
    rows, cols = tuple(args.rows or grid), tuple(args.cols or grid)
    res = grid_sweep(cfg, keys, rows, cols, data, labels, enc, val, test)
    out = _out_dir(args, f"sweep_{args.grid}")
    for metric in plotting.METRICS:
        m = res.matrix(metric)
        lines = [f"{keys[0]}\\{keys[1]}\t" + "\t".join(f"{c:g}" for c in cols)]
        lines += [f"{r:g}\t" + "\t".join(f"{v:.6f}" for v in m[i]) for i, r in enumerate(rows)]
        text = "\n".join(lines) + "\n"
        (out / f"{metric}.tsv").write_text(text)
        plotting.sweep_heatmap(m, rows, cols, keys, metric, out / f"{metric}.png")
        sys.stdout.write(f"# {metric}\n{text}")
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg, model = model_from_checkpoint(ckpt)
    labels = labels_from_checkpoint(ckpt)
    enc = build_encoders(cfg.model, cfg.hyper.patch_size)
    dtype = _DTYPES[cfg.dtype]
    if args.image:
        images = [(Path(p).stem, read_image(p)) for p in args.image]
    elif args.root:
        man = load_manifest(args.root, args.split or cfg.split, False, "testset", labels)
        images = [(e.sample_id.replace("/", "__"), read_image(Path(args.root) / e.image_path)) for e in man.entries]
    else:
        raise UsageError("predict needs --image or --root")
    out = Path(args.out)
    with torch.no_grad():
        text = model.affordance_text(enc.text, labels)
        for stem, img in images:
            img.check_patch_size(cfg.hyper.patch_size)
            layers, cls = encode_image(img, enc.image)
            patches, text_hat = model([l.to(dtype) for l in layers], cls.to(dtype), text)
            preds = predict_masks(patches, text_hat, img.height, img.width).to(torch.float64).numpy()
            for c, name in enumerate(labels.affordance_names):
                gray, _ = export_heatmap(preds[c], img.pixels, out / stem / f"{name}.png")
                print(f"{stem}\t{name}\t{gray}")
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(n_objects=args.objects, n_affordances=args.affordances, image_size=args.size,
                         seed=args.seed, n_test_variants=args.test_variants)
    train_m, test_m = generate_synthetic(spec, args.root)
    print(f"root\t{args.root}")
    print(f"train_images\t{len(train_m)}")
    print(f"test_images\t{len(test_m)}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "sweep": cmd_sweep,
            "predict": cmd_predict, "gen-synthetic": cmd_gen_synthetic}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        (exc.parser or parser).print_help(sys.stderr)
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return 0 if not exc.code else USAGE_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"affordmi {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except _RUNTIME as exc:
        print(f"affordmi {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
