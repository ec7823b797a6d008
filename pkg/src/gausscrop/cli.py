"""Command-line entry point: ``gausscrop <command> [--config PATH] [overrides]``.

Configuration comes from ``--config``, else from the file named by the
``GAUSSCROP_CONFIG`` environment variable, else from built-in defaults.
Scalar flags override whatever the file says. The whole configuration,
including input files, is validated before any output is written; on a bad
configuration every problem is printed to stderr and the exit status is 2.

Outputs are byte-for-byte reproducible for a given configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from gausscrop.analytics import (
    SUMMARY_METRICS,
    default_scene,
    estimate_fp_rate,
    geometry_stats,
    run_sweep,
    summarize,
)
from gausscrop.augment import AugmentConfig
from gausscrop.config import ConfigError, RunConfig, load_run_config
from gausscrop.crops import CropperConfig, ImageDims, generate_views
from gausscrop.dataio import (
    FormatError,
    LabeledDataset,
    gen_synthetic,
    load_cifar10_bin,
    load_npz,
    load_ppm,
    save_npz,
    save_ppm,
    write_csv_rows,
    write_results,
)
from gausscrop.encoder import EncoderParams, init_encoder
from gausscrop.rng import RngStream
from gausscrop.training import linear_eval, pretrain, view_shape, with_dataset_stats

log = logging.getLogger("gausscrop")

CONFIG_ENV = "GAUSSCROP_CONFIG"

# purpose keys for forking the master stream; stable so outputs stay reproducible
DATA_KEY, TRAIN_KEY, EVAL_KEY, VIEWS_KEY, STATS_KEY = range(5)

OVERRIDES = {
    "seed": "seed",
    "out": "out",
    "alpha": "cropper.alpha",
    "crop_size": "cropper.crop_size",
    "method": "cropper.method",
    "tau": "train.tau",
    "epochs": "train.epochs",
    "encoder": "encoder",
}


class InputError(Exception):
    """An input file that passed validation turned out to be unusable."""


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _finite_or_none(x: float | None) -> float | None:
    return None if x is None or not math.isfinite(x) else x


# --- inputs ------------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> LabeledDataset:
    ds_cfg = cfg.dataset
    if ds_cfg.source == "cifar10-bin":
        try:
            ds = load_cifar10_bin(Path(ds_cfg.path).read_bytes())
        except FormatError as exc:
            raise InputError(f"dataset.path: {exc}") from None
        return ds.subset(np.arange(min(ds_cfg.n, len(ds))))
    ds, _ = gen_synthetic(ds_cfg.synthetic, ds_cfg.n, RngStream(cfg.seed).fork(DATA_KEY))
    return ds


def load_image(cfg: RunConfig) -> np.ndarray:
    if cfg.image:
        try:
            return load_ppm(Path(cfg.image).read_bytes())
        except FormatError as exc:
            raise InputError(f"image: {exc}") from None
    ds, _ = gen_synthetic(cfg.dataset.synthetic, 1, RngStream(cfg.seed).fork(DATA_KEY))
    return ds.images[0]


def load_encoder(path: str) -> tuple[EncoderParams, AugmentConfig | None]:
    try:
        arrays = load_npz(Path(path).read_bytes())
        params = EncoderParams.from_npz_dict(arrays)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"encoder: cannot read {path!r}: {exc}") from None
    aug = None
    if "aug_mean" in arrays:
        aug = AugmentConfig(mean=tuple(arrays["aug_mean"]), std=tuple(arrays["aug_std"]))
    return params, aug


def scene_dims(cfg: RunConfig) -> ImageDims:
    return cfg.dataset.synthetic.dims


# --- commands ----------------------------------------------------------------
# Each command computes everything first and returns {filename: bytes}; main()
# writes the files only once the command has succeeded.


def cmd_demo_crops(cfg: RunConfig) -> dict[str, bytes]:
    image = load_image(cfg)
    views = generate_views(image, cfg.cropper, RngStream(cfg.seed).fork(VIEWS_KEY))
    out = {"input.ppm": save_ppm(image), "rects.json": _json_bytes([r.to_dict() for r in views.rects])}
    for i, view in enumerate(views.views):
        out[f"view_{i}.ppm"] = save_ppm(view)
    log.info("sampled %d %s views", len(views.rects), cfg.cropper.method.value)
    return out


def cmd_stats(cfg: RunConfig) -> dict[str, bytes]:
    dims = ImageDims.of(load_image(cfg)) if cfg.image else scene_dims(cfg)
    rng = RngStream(cfg.seed).fork(STATS_KEY)
    geo = geometry_stats(cfg.cropper, dims, cfg.n_samples, rng.fork(0), grid=cfg.sweep.grid)
    scene = default_scene(dims, cfg.sweep.object_fraction)
    fp = estimate_fp_rate(cfg.cropper, scene, cfg.fp_tau, cfg.n_samples, rng.fork(1))
    doc = {
        "method": cfg.cropper.method.value,
        "alpha": cfg.cropper.alpha,
        "crop_size": cfg.cropper.crop_size,
        "width": dims.width,
        "height": dims.height,
        "n_samples": cfg.n_samples,
        "mean_pair_iou": geo.mean_pair_iou,
        "mean_center_distance": geo.mean_center_distance,
        "oob_area_fraction": geo.oob_area_fraction,
        "fp_tau": cfg.fp_tau,
        "fp_rate": fp.fp_rate,
        "fp_standard_error": fp.standard_error,
    }
    grid_rows = [{"row": i, **{f"c{j}": float(v) for j, v in enumerate(row)}} for i, row in enumerate(geo.coverage_grid)]
    columns = ["row"] + [f"c{j}" for j in range(geo.coverage_grid.shape[1])]
    log.info("fp_rate %.4f, mean pair IoU %.4f", fp.fp_rate, geo.mean_pair_iou)
    return {"stats.json": _json_bytes(doc), "coverage.csv": write_csv_rows(grid_rows, columns)}


def curve_table(summary: list[dict], crop_sizes) -> tuple[list[dict], list[str]]:
    """Wide table: one row per (metric, method, alpha), mean and std per crop size.

    Plotting each row's ``crop_<c>_mean`` against ``alpha`` gives one curve
    per crop size, the layout of an accuracy-versus-alpha figure.
    """
    by_cell = {(r["method"], r["alpha"], r["crop_size"]): r for r in summary}
    methods = list(dict.fromkeys(r["method"] for r in summary))
    alphas = list(dict.fromkeys(r["alpha"] for r in summary))
    columns = ["metric", "method", "alpha"]
    for c in crop_sizes:
        columns += [f"crop_{c}_mean", f"crop_{c}_std"]
    rows = []
    for metric in SUMMARY_METRICS:
        if all(r[f"{metric}_mean"] is None for r in summary):
            continue
        for method in methods:
            for alpha in alphas:
                row = {"metric": metric, "method": method, "alpha": alpha}
                for c in crop_sizes:
                    cell = by_cell.get((method, alpha, float(c)), {})
                    row[f"crop_{c}_mean"] = _finite_or_none(cell.get(f"{metric}_mean"))
                    row[f"crop_{c}_std"] = _finite_or_none(cell.get(f"{metric}_std"))
                rows.append(row)
    return rows, columns


def cmd_sweep(cfg: RunConfig) -> dict[str, bytes]:
    sw = cfg.sweep
    dims = scene_dims(cfg)
    scene = default_scene(dims, sw.object_fraction)
    lep = None
    if sw.with_lep:
        data = load_dataset(cfg)
        aug = with_dataset_stats(cfg.augment, data.images)

        def lep(cropper: CropperConfig, seed: int) -> float:
            res = pretrain(data.images, cropper, aug, cfg.train, RngStream(seed).fork(TRAIN_KEY))
            return linear_eval(res.params, data, RngStream(seed).fork(EVAL_KEY), cfg.eval, aug)

    records = run_sweep(
        sw.methods, sw.alphas, sw.crop_sizes, sw.seeds, scene,
        tau=sw.fp_tau, n_samples=sw.n_samples, grid=sw.grid,
        uniform_bounds=cfg.cropper.uniform_bounds, lep=lep, progress=log.info,
    )
    summary = summarize(records)
    sum_cols = ["method", "alpha", "crop_size", "n_seeds"]
    for m in SUMMARY_METRICS:
        sum_cols += [f"{m}_mean", f"{m}_std"]
    for row in summary:
        for k, v in row.items():
            if isinstance(v, float):
                row[k] = _finite_or_none(v)
    curves, curve_cols = curve_table(summary, sw.crop_sizes)
    return {
        "records.csv": write_results(records, "csv"),
        "records.json": write_results(records, "json"),
        "summary.csv": write_csv_rows(summary, sum_cols),
        "curves.csv": write_csv_rows(curves, curve_cols),
    }


def cmd_pretrain(cfg: RunConfig) -> dict[str, bytes]:
    data = load_dataset(cfg)
    aug = with_dataset_stats(cfg.augment, data.images)
    res = pretrain(data.images, cfg.cropper, aug, cfg.train, RngStream(cfg.seed).fork(TRAIN_KEY))
    arrays = res.params.to_npz_dict()
    arrays["aug_mean"] = np.array(aug.mean)
    arrays["aug_std"] = np.array(aug.std)
    curve = [{"epoch": i, "loss": v} for i, v in enumerate(res.loss_curve)]
    return {"encoder.npz": save_npz(arrays), "loss_curve.csv": write_csv_rows(curve, ["epoch", "loss"])}


def cmd_linear_eval(cfg: RunConfig) -> dict[str, bytes]:
    data = load_dataset(cfg)
    if cfg.encoder:
        params, aug = load_encoder(cfg.encoder)
        h, w, c = params.input_shape
        if c != data.images.shape[-1] or h > data.images.shape[1] or w > data.images.shape[2]:
            raise InputError(f"encoder: input shape {params.input_shape} does not fit images of shape {data.images.shape[1:]}")
    else:
        log.info("no encoder given; evaluating an untrained one")
        shape = view_shape(cfg.cropper, data.images)
        tc = cfg.train
        # same stream pretrain would use for its initialization
        params = init_encoder(shape, RngStream(cfg.seed).fork(TRAIN_KEY).fork(0), tc.hidden, tc.embed_dim, tc.activation)
        aug = None
    aug = with_dataset_stats(aug or cfg.augment, data.images)
    acc = linear_eval(params, data, RngStream(cfg.seed).fork(EVAL_KEY), cfg.eval, aug)
    doc = {
        "accuracy": acc,
        "pretrained": bool(cfg.encoder),
        "n_images": len(data),
        "class_count": data.class_count,
        "features": cfg.eval.features,
        "views": cfg.eval.views,
    }
    log.info("linear evaluation accuracy %.4f", acc)
    return {"eval.json": _json_bytes(doc)}


COMMANDS = {
    "demo-crops": (cmd_demo_crops, "sample views from one image; writes rects.json and view_<i>.ppm"),
    "stats": (cmd_stats, "Monte Carlo crop geometry and false-positive rate for one cropper"),
    "sweep": (cmd_sweep, "method x alpha x crop_size x seed grid; writes records, summary and curves"),
    "pretrain": (cmd_pretrain, "contrastive pretraining; writes encoder.npz and loss_curve.csv"),
    "linear-eval": (cmd_linear_eval, "linear evaluation of a frozen (or untrained) encoder; writes eval.json"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help=f"JSON run configuration (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, help="master seed, an unsigned 64-bit integer")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--alpha", type=float, help="variance scale of the crop center distribution")
    common.add_argument("--crop-size", type=float, help="view area as a fraction of the image area")
    common.add_argument("--method", help="RandomCrop, GCC, CGCC, MGCC or MCGCC")
    common.add_argument("--tau", type=float, help="NT-Xent temperature")
    common.add_argument("--epochs", type=int, help="pretraining epochs")
    common.add_argument("--encoder", metavar="PATH", help="encoder.npz for linear-eval")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")

    parser = argparse.ArgumentParser(prog="gausscrop", description="Gaussian-centered crop views for contrastive learning.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", force=True)

    overrides = {path: getattr(args, name) for name, path in OVERRIDES.items() if getattr(args, name) is not None}
    config_path = args.config or os.environ.get(CONFIG_ENV) or None
    try:
        cfg = load_run_config(config_path, overrides)
    except ConfigError as exc:
        print(f"gausscrop {args.command}: {exc}", file=sys.stderr)
        return 2

    command, _ = COMMANDS[args.command]
    try:
        outputs = command(cfg)
    except InputError as exc:
        print(f"gausscrop {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"gausscrop {args.command}: failed: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in outputs.items():
        (out_dir / name).write_bytes(data)
    log.info("wrote %s", ", ".join(str(out_dir / n) for n in outputs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
