"""Command-line surface: toydata, train, translate, eval.

Precedence for train settings: flags override config-file values, which
override built-in defaults. Exit codes: 0 success, 2 validation/config
error, 3 numeric abort during optimization.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import (
    ToyDatasetSpec,
    denormalize,
    generate_toy_dataset,
    load_paired_dataset,
    normalize,
)
from .errors import ConfigError, NumericError, ValidationError
from .losses import LossWeights
from .metrics import KNOWN_METRICS, evaluate_pairs, write_metric_csv
from .networks import ConvStackExtractor
from .training import PERCEPTUAL_EXTRACTOR_SEED, TrainConfig, TrainState, train

OUTPUT_ROOT_ENV = "CTRLGAN_OUT"

# Keys accepted in a run-config file, with their defaults. Flags of the same
# name override these; anything else in the file is rejected.
RUN_CONFIG_DEFAULTS = {
    "dataset": None,
    "out": None,
    "preset": "custom",
    "ablation": None,
    "lr": 0.0002,
    "beta1": 0.5,
    "beta2": 0.999,
    "batch_size": 4,
    "epochs": 1,
    "seed": 0,
    "base_channels": 64,
    "num_res_blocks": 9,
    "disc_base_channels": 64,
    "structure_channels": 3,
    "augment": False,
    "checkpoint_interval": 0,
    "num_cycles": "two",
    "color_norm": "L1",
    "lambda_color": 0.0,
    "lambda_cyc": 0.0,
    "lambda_con": 0.0,
    "lambda_vgg": 0.0,
    "lambda_tv": 0.0,
    "perceptual_layer": 2,
    "metrics": list(KNOWN_METRICS),
}


def _default_out(seed: int) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"


def _load_run_config(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - set(RUN_CONFIG_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(RUN_CONFIG_DEFAULTS)
    merged.update(raw)
    return merged


def _load_raster_tensor(path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with Image.open(path) as im:
        return normalize(np.asarray(im.convert("RGB")))


def cmd_toydata(args) -> int:
    spec = ToyDatasetSpec(num_pairs=args.pairs, image_size=args.size, rng_seed=args.seed)
    out = Path(args.out) if args.out else _default_out(args.seed)
    samples = generate_toy_dataset(spec, out)
    print(f"wrote {len(samples)} train pairs and {spec.num_test_pairs} test pairs to {out}")
    return 0


def cmd_train(args) -> int:
    settings = _load_run_config(args.config) if args.config else dict(RUN_CONFIG_DEFAULTS)
    for key in RUN_CONFIG_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if not settings["dataset"]:
        raise ValidationError("no dataset given (flag --dataset or config key 'dataset')")
    weights = LossWeights(
        lambda_color=settings["lambda_color"],
        lambda_cyc=settings["lambda_cyc"],
        lambda_con=settings["lambda_con"],
        lambda_vgg=settings["lambda_vgg"],
        lambda_tv=settings["lambda_tv"],
        color_norm=settings["color_norm"],
        num_cycles=settings["num_cycles"],
    )
    cfg = TrainConfig(
        weights=weights,
        lr=settings["lr"],
        beta1=settings["beta1"],
        beta2=settings["beta2"],
        batch_size=settings["batch_size"],
        epochs=settings["epochs"],
        seed=settings["seed"],
        preset=settings["preset"],
        ablation=settings["ablation"],
        structure_channels=settings["structure_channels"],
        base_channels=settings["base_channels"],
        num_res_blocks=settings["num_res_blocks"],
        disc_base_channels=settings["disc_base_channels"],
        perceptual_layer=settings["perceptual_layer"],
        augment=settings["augment"],
        checkpoint_interval=settings["checkpoint_interval"],
    )
    samples = load_paired_dataset(settings["dataset"], "train")
    out = Path(settings["out"]) if settings["out"] else _default_out(cfg.seed)
    ckpt = train(samples, cfg, out)
    print(f"finished {cfg.epochs} epoch(s); checkpoint at {ckpt}")
    return 0


def cmd_translate(args) -> int:
    from .training import translate

    image = _load_raster_tensor(args.image)
    structures = [_load_raster_tensor(p) for p in args.structures]
    outputs = translate(args.checkpoint, image, structures)
    out = Path(args.out) if args.out else _default_out(0)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for struct_path, result in zip(args.structures, outputs):
        name = f"{stem}_to_{Path(struct_path).stem}.png"
        Image.fromarray(denormalize(result)).save(out / name)
        print(out / name)
    return 0


def _grid_raster(samples, outputs) -> Image.Image:
    """Per sample: input | target structure | output | ground truth, stacked."""
    rows = []
    for sample, result in zip(samples, outputs):
        panels = [
            denormalize(sample.x.values),
            denormalize(sample.c_y.values),
            denormalize(result),
            denormalize(sample.y.values),
        ]
        rows.append(np.concatenate(panels, axis=1))
    return Image.fromarray(np.concatenate(rows, axis=0))


def cmd_eval(args) -> int:
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metric_names) - set(KNOWN_METRICS)
    if unknown:
        raise ValidationError(f"unknown metrics: {sorted(unknown)}; known: {list(KNOWN_METRICS)}")
    samples = load_paired_dataset(args.dataset, args.split)
    if args.identity:
        lookup = {id(s.c_y.values): s.y.values for s in samples}
        generate_fn = lambda x, c_y: lookup[id(c_y)]
    else:
        if not args.checkpoint:
            raise ValidationError("--checkpoint is required unless --identity is given")
        state = TrainState.load(args.checkpoint)

        def generate_fn(x, c_y):
            with torch.no_grad():
                return state.generator(x, c_y if state.cfg.structure_input else None)

    extractor = ConvStackExtractor(seed=PERCEPTUAL_EXTRACTOR_SEED)
    summary, per_pair = evaluate_pairs(samples, generate_fn, extractor, metric_names)
    out = Path(args.out) if args.out else _default_out(0)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    write_metric_csv(csv_path, summary)
    if args.per_pair:
        import csv as _csv

        names = [n for n in metric_names if n in per_pair]
        with open(out / "per_pair.csv", "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["pair"] + names)
            for i in range(len(samples)):
                writer.writerow([i] + [f"{per_pair[n][i]:.10g}" for n in names])
    for name in metric_names:
        print(f"{name},{summary[name]:.6f}")
    if args.grid:
        outputs = [generate_fn(s.x.values, s.c_y.values) for s in samples]
        _grid_raster(samples, outputs).save(out / "grid.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlgan", description="Structure-controllable image translation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toydata", help="render the deterministic synthetic shape dataset")
    p.add_argument("--pairs", type=int, default=16, help="train pairs to render (default 16)")
    p.add_argument("--size", type=int, default=64, help="square image size, multiple of 4 (default 64)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help=f"output dir (default ${OUTPUT_ROOT_ENV}/<time>-seed<seed>)")
    p.set_defaults(func=cmd_toydata)

    p = sub.add_parser("train", help="train a model on a paired dataset")
    p.add_argument("--config", default=None, help="JSON run-config file; flags override it")
    p.add_argument("--dataset", default=None, help="dataset root with train/pairs.csv")
    p.add_argument("--out", default=None)
    p.add_argument("--preset", choices=["gesture", "crossview", "custom"], default=None)
    p.add_argument("--ablation", default=None, help="ablation row (B, C, D, E11..E42, F)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
    p.add_argument("--num-res-blocks", dest="num_res_blocks", type=int, default=None)
    p.add_argument("--disc-base-channels", dest="disc_base_channels", type=int, default=None)
    p.add_argument("--num-cycles", dest="num_cycles", choices=["one", "two"], default=None)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int, default=None)
    p.add_argument("--augment", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="apply a checkpoint to one image and several structures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("structures", nargs="+", help="structure map rasters, one output each")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="run metrics over a dataset split")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--identity", action="store_true", help="score ground truth against itself")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--metrics", default=",".join(KNOWN_METRICS))
    p.add_argument("--grid", action="store_true", help="also write a comparison grid raster")
    p.add_argument("--per-pair", dest="per_pair", action="store_true", help="dump per-pair metric values")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(f"last loss report: {exc.report}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
