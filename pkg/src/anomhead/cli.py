"""Command-line operator surface: train, infer, eval, bench, gradcheck, synth.

Exit codes: 0 success, 2 usage/configuration error, 3 data/protocol error,
4 numerical-check failure.  Machine-readable results go to stdout (JSON or
CSV files); progress and human-readable summaries go to stderr.  All file
outputs are written to a temp name and renamed, so a crashed run never leaves
a partial artifact behind.
"""

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io_formats
from .errors import (
    AnomheadError,
    ConfigError,
    FileFormatError,
    InvalidArgumentError,
    ShapeError,
    StateError,
    UndefinedMetricError,
)
from .evaluation import auroc, best_f1_threshold, pixel_auroc
from .gradcheck import run_gradient_checks
from .inference import benchmark, build_result, score_features
from .model import NoiseConfig, init_head
from .pipeline import PipelineConfig, extract_local_features
from .rng import STREAM_INIT, seeded_rng
from .synth import SynthConfig, generate_dataset
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_LOSS_FLAG = {"trunc_l1": "truncated_l1", "ce": "cross_entropy"}


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_text(path, buf.getvalue())


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_stacks(manifest, records):
    return [io_formats.read_feature_file(manifest.feature_file(s)) for s in records]


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    manifest = io_formats.read_manifest(args.manifest)
    train_records = manifest.split("train")
    if not train_records:
        raise InvalidArgumentError(f"{args.manifest}: manifest has no train samples")

    pipeline = PipelineConfig(patch_size=args.patch_size,
                              selected_levels=tuple(args.levels))
    config = TrainConfig(
        th_pos=args.th_pos, th_neg=args.th_neg,
        lr_adaptor=args.lr_adaptor, lr_discriminator=args.lr_disc,
        weight_decay=args.weight_decay,
        epochs=args.epochs, batch_size=args.batch,
        noise=NoiseConfig(mean=args.noise_mean, sigma=args.sigma, seed=args.seed),
        loss_kind=_LOSS_FLAG[args.loss], seed=args.seed,
    )
    config_line = {
        "command": "train", "manifest": str(args.manifest), "out": str(args.out),
        "patch_size": pipeline.patch_size, "levels": list(pipeline.selected_levels),
        "adaptor": args.adaptor, "hidden": args.hidden,
        "loss": args.loss, "sigma": args.sigma, "noise_mean": args.noise_mean,
        "epochs": args.epochs, "batch": args.batch, "seed": args.seed,
        "lr_adaptor": args.lr_adaptor, "lr_disc": args.lr_disc,
        "weight_decay": args.weight_decay,
        "th_pos": args.th_pos, "th_neg": args.th_neg,
    }
    _info("config: " + json.dumps(config_line, sort_keys=True))

    stacks = _load_stacks(manifest, train_records)
    channels = sum(stacks[0].level_map(l).shape[2] for l in pipeline.selected_levels)
    head = init_head(channels, variant=args.adaptor, hidden=args.hidden,
                     rng=seeded_rng(args.seed, STREAM_INIT))

    def progress(stats):
        if not args.quiet:
            _info(f"epoch {stats.epoch + 1}/{config.epochs}  "
                  f"loss {stats.mean_loss:.6f}  ({stats.wall_ms:.0f} ms)")

    trace = train(stacks, pipeline, head, config, progress=progress)

    ckpt = io_formats.Checkpoint(pipeline=pipeline, head=head, train_config=config)
    io_formats.write_checkpoint(ckpt, args.out)
    loss_csv = args.loss_csv or str(args.out) + ".loss.csv"
    _write_csv(loss_csv, ["epoch", "mean_loss", "wall_ms"],
               [[s.epoch, f"{s.mean_loss:.9g}", f"{s.wall_ms:.3f}"] for s in trace])

    print(json.dumps({
        "checkpoint": str(args.out),
        "loss_csv": str(loss_csv),
        "channels": channels,
        "epochs": config.epochs,
        "final_loss": trace[-1].mean_loss,
    }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _infer_one(head, pipeline, stack, out_hw, args):
    fmap = extract_local_features(stack, pipeline)
    raw = score_features(head, fmap)
    out_h, out_w = out_hw if out_hw is not None else raw.shape
    return build_result(raw, out_h, out_w, smoothing_sigma=args.smooth_sigma,
                        score_after_smoothing=args.score_after_smoothing)


def _cmd_infer(args) -> int:
    ckpt = io_formats.read_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "snam" if args.map_format == "raw" else "pgm"
    override = tuple(args.image_size) if args.image_size else None

    jobs = []  # (sample_id, stack, out_hw, label)
    source = Path(args.source)
    if source.suffix == ".json":
        manifest = io_formats.read_manifest(source)
        records = manifest.samples if args.split == "all" else manifest.split(args.split)
        if not records:
            raise InvalidArgumentError(f"{source}: no samples in split {args.split!r}")
        hw = override or (manifest.image_height, manifest.image_width)
        for rec in records:
            stack = io_formats.read_feature_file(manifest.feature_file(rec))
            jobs.append((rec.sample_id, stack, hw, rec.label))
    else:
        stack = io_formats.read_feature_file(source)
        jobs.append((source.stem, stack, override, ""))

    rows = []
    for sample_id, stack, hw, label in jobs:
        result = _infer_one(ckpt.head, ckpt.pipeline, stack, hw, args)
        map_path = out_dir / f"{sample_id}.{ext}"
        io_formats.write_anomaly_map(result, map_path, fmt=args.map_format)
        rows.append([sample_id, label, f"{result.image_score:.9g}", map_path.name])

    _write_csv(out_dir / "scores.csv", ["sample_id", "label", "image_score", "map_file"], rows)
    print(json.dumps({"out_dir": str(out_dir), "samples": len(rows),
                      "scores_csv": str(out_dir / "scores.csv")}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _eval_pair(ckpt_path, manifest_path, args):
    ckpt = io_formats.read_checkpoint(ckpt_path)
    manifest = io_formats.read_manifest(manifest_path)
    records = manifest.split("test")
    if not records:
        raise InvalidArgumentError(f"{manifest_path}: manifest has no test samples")

    image_scores, labels = [], []
    maps, masks = [], []
    any_mask = False
    out_hw = (manifest.image_height, manifest.image_width)
    for rec in records:
        stack = io_formats.read_feature_file(manifest.feature_file(rec))
        result = _infer_one(ckpt.head, ckpt.pipeline, stack, out_hw, args)
        image_scores.append(result.image_score)
        labels.append(rec.label)
        mask_file = manifest.mask_file(rec)
        if mask_file is not None:
            mask = io_formats.read_mask(mask_file)
            if mask.shape != result.map.shape:
                raise ShapeError(
                    f"{rec.sample_id}: mask {mask.shape} vs map {result.map.shape}"
                )
            any_mask = True
        else:
            mask = np.zeros(result.map.shape, dtype=bool)
        maps.append(result.map)
        masks.append(mask)

    i_auroc = auroc(np.asarray(image_scores), np.asarray(labels))
    p_auroc = None
    threshold = f1 = None
    if any_mask:
        try:
            p_auroc = pixel_auroc(maps, masks)
        except UndefinedMetricError:
            p_auroc = None
    if p_auroc is not None:
        pixel_scores = np.concatenate([m.ravel() for m in maps]).astype(np.float64)
        pixel_labels = np.concatenate([m.ravel() for m in masks]).astype(np.int8)
        threshold, f1 = best_f1_threshold(pixel_scores, pixel_labels)
    else:
        threshold, f1 = best_f1_threshold(np.asarray(image_scores), np.asarray(labels))
    return {
        "category": manifest.name,
        "n_test": len(records),
        "i_auroc": i_auroc,
        "p_auroc": p_auroc,
        "threshold": threshold,
        "f1": f1,
    }


def _cmd_eval(args) -> int:
    if len(args.pairs) % 2 != 0:
        raise InvalidArgumentError(
            "eval expects CHECKPOINT MANIFEST pairs; got an odd number of paths"
        )
    pairs = list(zip(args.pairs[0::2], args.pairs[1::2]))
    results = [_eval_pair(c, m, args) for c, m in pairs]

    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    rows = [[r["category"], fmt(r["i_auroc"]), fmt(r["p_auroc"]),
             fmt(r["threshold"]), fmt(r["f1"])] for r in results]
    i_avg = float(np.mean([r["i_auroc"] for r in results]))
    p_present = [r["p_auroc"] for r in results if r["p_auroc"] is not None]
    p_avg = float(np.mean(p_present)) if p_present else None
    f_avg = float(np.mean([r["f1"] for r in results]))
    rows.append(["average", fmt(i_avg), fmt(p_avg), "", fmt(f_avg)])
    _write_csv(args.out, ["category", "i_auroc", "p_auroc", "threshold", "f1"], rows)

    for r in results:
        _info(f"{r['category']}: I-AUROC {fmt(r['i_auroc'])}  "
              f"P-AUROC {fmt(r['p_auroc']) or 'absent'}  F1 {fmt(r['f1'])}")
    print(json.dumps({"out": str(args.out),
                      "categories": len(results),
                      "i_auroc_avg": i_avg,
                      "p_auroc_avg": p_avg}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _cmd_bench(args) -> int:
    h, w, c = args.shape
    if args.iters < 1:
        raise InvalidArgumentError(f"--iters must be >= 1, got {args.iters}")
    if args.checkpoint:
        head = io_formats.read_checkpoint(args.checkpoint).head
    else:
        head = init_head(c, variant="linear", hidden=args.hidden,
                         rng=seeded_rng(args.seed, STREAM_INIT))
        head.finalized = True
    report = benchmark(head, h, w, c, iters=args.iters, warmup=args.warmup,
                       out_scale=args.out_scale, smoothing_sigma=args.smooth_sigma,
                       seed=args.seed)
    _info(f"shape {h}x{w}x{c}  iters {report.iters} (+{report.warmup_excluded} warmup excluded)")
    _info(f"adaptor        {report.adaptor_ms:9.3f} ms")
    _info(f"discriminator  {report.discriminator_ms:9.3f} ms")
    _info(f"post-process   {report.postprocess_ms:9.3f} ms")
    _info(f"total          {report.total_ms:9.3f} ms  ->  {report.images_per_sec:.2f} images/s")
    print(json.dumps(report.as_dict()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def _cmd_gradcheck(args) -> int:
    report = run_gradient_checks(
        n_configs=args.configs, seed=args.seed, step=args.step,
        threshold=args.threshold, max_dims=tuple(args.dims), corrupt=args.corrupt,
    )
    print(json.dumps(report.as_dict()))
    if not report.passed:
        _info(f"gradient check FAILED: max relative error {report.max_rel_error:.3e} "
              f">= {report.threshold:.1e}")
        return EXIT_NUMERIC
    _info(f"gradient check passed: max relative error {report.max_rel_error:.3e} "
          f"over {report.n_configs} configs in {report.elapsed_s:.1f} s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_train=args.n_train, n_test=args.n_test,
        grid_h=args.grid[0], grid_w=args.grid[1],
        channels=args.channels, defect_rate=args.defect_rate,
        shift=args.shift, seed=args.seed,
        level_index=args.level, image_scale=args.image_scale,
    )
    manifest_path = generate_dataset(args.out_dir, cfg)
    print(json.dumps({
        "manifest": str(manifest_path),
        "n_train": cfg.n_train, "n_test": cfg.n_test,
        "grid": [cfg.grid_h, cfg.grid_w], "channels": cfg.channels,
        "shift": cfg.shift, "seed": cfg.seed,
        "level": cfg.level_index, "image_scale": cfg.image_scale,
    }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomhead",
        description="Feature-space anomaly detection: train, score and evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a head on the train split of a manifest")
    p.add_argument("manifest", help="dataset manifest (JSON)")
    p.add_argument("out", help="output checkpoint path (SNCK)")
    p.add_argument("--loss-csv", default=None, help="per-epoch loss CSV (default OUT.loss.csv)")
    p.add_argument("--sigma", type=float, default=0.015, help="noise std for negatives")
    p.add_argument("--noise-mean", type=float, default=0.0)
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--levels", type=int, nargs="+", default=[2, 3])
    p.add_argument("--adaptor", choices=["identity", "linear", "mlp"], default="linear")
    p.add_argument("--hidden", type=int, default=None,
                   help="discriminator hidden width (default: channel count)")
    p.add_argument("--loss", choices=sorted(_LOSS_FLAG), default="trunc_l1")
    p.add_argument("--epochs", type=int, default=160)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-adaptor", type=float, default=1e-4)
    p.add_argument("--lr-disc", type=float, default=2e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--th-pos", type=float, default=0.5)
    p.add_argument("--th-neg", type=float, default=-0.5)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="write anomaly maps for a manifest or feature file")
    p.add_argument("checkpoint")
    p.add_argument("source", help="manifest (.json) or a single feature file")
    p.add_argument("out_dir")
    p.add_argument("--map-format", choices=io_formats.MAP_FORMATS, default="raw")
    p.add_argument("--smooth-sigma", type=float, default=4.0)
    p.add_argument("--score-after-smoothing", action="store_true",
                   help="take the image score from the smoothed map instead of the raw map")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("H", "W"), default=None)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="I-AUROC / P-AUROC / best-F1 per category")
    p.add_argument("pairs", nargs="+", metavar="CHECKPOINT MANIFEST",
                   help="one or more checkpoint/manifest pairs")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--smooth-sigma", type=float, default=4.0)
    p.add_argument("--score-after-smoothing", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="per-stage latency of the inference path")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--shape", type=int, nargs=3, metavar=("H", "W", "C"),
                   default=[28, 28, 1536])
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--out-scale", type=int, default=8)
    p.add_argument("--smooth-sigma", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--dims", type=int, nargs=3, metavar=("C", "HD", "BATCH"),
                   default=[8, 8, 16], help="maximum sampled dimensions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=24)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("out_dir")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"), default=[16, 16])
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--defect-rate", type=float, default=0.5)
    p.add_argument("--shift", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--image-scale", type=int, default=8)
    p.set_defaults(fn=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidArgumentError, ConfigError, StateError) as exc:
        _info(f"error: {exc}")
        return EXIT_USAGE
    except (FileFormatError, ShapeError, UndefinedMetricError, OSError) as exc:
        _info(f"error: {exc}")
        return EXIT_DATA
    except AnomheadError as exc:
        _info(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
