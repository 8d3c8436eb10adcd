"""Command-line harness.

Subcommands: ``gen-data``, ``train``, ``eval``, ``robustness``, ``ablate``,
``dump-features``. Run directories follow
``runs/<name>/{config.echo, log.csv, ckpt.best, ckpt.last, report.csv, plots/}``.
The run root defaults to $TRIFUSE_RUN_ROOT (falling back to ./runs) when
--out is not given. Exit codes: 0 ok, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import (
    FUSION_VARIANTS,
    LOSS_VARIANTS,
    POOLING_SCHEDULE_LABELS,
    ModelConfig,
    TrainConfig,
    default_train_config,
    load_config_file,
    schedule_from_label,
    write_config_file,
)
from .backbone import BACKBONE_PRESETS
from .data import (
    AttackSpec,
    BLUR_KERNELS,
    JPEG_QUALITIES,
    SampleRecord,
    apply_attack,
    attack_from_label,
    load_dataset,
    make_dataset,
    write_dataset,
)
from .errors import ConfigError, DataIOError, NumericalError, TrifuseError
from .metrics import MetricRow, write_report_csv
from .train import evaluate_records, model_from_checkpoint, train_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _run_root() -> Path:
    return Path(os.environ.get("TRIFUSE_RUN_ROOT", "runs"))


def _resolve_out(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return _run_root() / default_name


def _load_configs(args) -> tuple[ModelConfig, TrainConfig]:
    if args.config:
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        preset = getattr(args, "preset", None) or "desk"
        model_cfg = ModelConfig(backbone=preset)
        train_cfg = default_train_config(preset)
    if getattr(args, "preset", None) and args.config:
        model_cfg = replace(model_cfg, backbone=args.preset)
    if getattr(args, "seed", None) is not None:
        model_cfg = replace(model_cfg, seed=args.seed)
    return model_cfg, train_cfg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    counts = {"splice": args.splice, "copy_move": args.copy_move, "authentic": args.authentic}
    attack_grid = None
    if args.attacks:
        attack_grid = [attack_from_label(s) for s in args.attacks.split(",")]
    split_counts = None
    if args.split_counts:
        parts = [int(x) for x in args.split_counts.split(",")]
        if len(parts) != 3:
            raise ConfigError("--split-counts takes three comma-separated integers")
        split_counts = tuple(parts)
    samples, splits = make_dataset(
        rng, counts, size=args.size, attack_grid=attack_grid, split_counts=split_counts
    )
    out = Path(args.out or "data")
    write_dataset(out, samples, splits)
    print(f"wrote {len(samples)} samples to {out} "
          f"(train/val/test = {len(splits['train'])}/{len(splits['val'])}/{len(splits['test'])})")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    run_dir = _resolve_out(args, f"train_seed{model_cfg.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_file(run_dir / "config.echo", model_cfg, train_cfg)
    summary = train_model(model_cfg, train_cfg, args.data, run_dir, resume_from=args.ckpt)
    print(
        f"trained {summary.epochs_run} epochs; best val loss {summary.best_val_loss:.6f} "
        f"at epoch {summary.best_epoch}; log: {summary.log_path}"
    )
    return EXIT_OK


def _eval_rows(model, ckpt, data_dir, split: str) -> list[MetricRow]:
    records, splits = load_dataset(data_dir)
    ids = splits[split] if splits.get(split) else sorted(records)
    image_size = ckpt.config.get("train.image_size", 64)
    return evaluate_records(model, records, ids, image_size)


def cmd_eval(args) -> int:
    model, ckpt = model_from_checkpoint(args.ckpt)
    rows = _eval_rows(model, ckpt, args.data, args.split)
    out = _resolve_out(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.csv"
    write_report_csv(report, rows)
    if args.dump_masks:
        from PIL import Image

        from .train import predict_probability

        records, _ = load_dataset(args.data)
        masks_dir = out / "pred_masks"
        masks_dir.mkdir(exist_ok=True)
        image_size = ckpt.config.get("train.image_size", 64)
        for row in rows:
            prob = predict_probability(model, records[row.sample_id].image, image_size)
            binary = (prob >= row.best_threshold).astype(np.uint8) * 255
            Image.fromarray(binary, mode="L").save(masks_dir / f"{row.sample_id}_pred.png")
    mean_f1 = float(np.mean([r.f1 for r in rows])) if rows else 0.0
    mean_iou = float(np.mean([r.iou for r in rows])) if rows else 0.0
    print(f"evaluated {len(rows)} samples: mean F1 {mean_f1:.4f}, mean IoU {mean_iou:.4f}")
    print(f"report: {report}")
    return EXIT_OK


def robustness_grid() -> list[AttackSpec]:
    grid = [AttackSpec()]
    grid += [AttackSpec("jpeg", q) for q in JPEG_QUALITIES]
    grid += [AttackSpec("gaussian_blur", k) for k in BLUR_KERNELS]
    return grid


def cmd_robustness(args) -> int:
    model, ckpt = model_from_checkpoint(args.ckpt)
    records, splits = load_dataset(args.data)
    ids = splits[args.split] if splits.get(args.split) else sorted(records)
    image_size = ckpt.config.get("train.image_size", 64)
    out = _resolve_out(args, "robustness")
    out.mkdir(parents=True, exist_ok=True)

    results = []
    for spec in robustness_grid():
        attacked = {
            i: SampleRecord(apply_attack(records[i].image, spec), records[i].mask, records[i].meta)
            for i in ids
        }
        rows = evaluate_records(model, attacked, ids, image_size)
        mean_f1 = float(np.mean([r.f1 for r in rows]))
        mean_iou = float(np.mean([r.iou for r in rows]))
        results.append((spec, mean_f1, mean_iou))

    csv_path = out / "robustness.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "parameter", "mean_f1", "mean_iou"])
        for spec, f1, iou in results:
            writer.writerow(
                [spec.kind, "" if spec.parameter is None else spec.parameter,
                 f"{f1:.6f}", f"{iou:.6f}"]
            )

    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    clean_f1 = results[0][1]
    for kind, params in (("jpeg", JPEG_QUALITIES), ("gaussian_blur", BLUR_KERNELS)):
        xs, f1s, ious = [], [], []
        for spec, f1, iou in results:
            if spec.kind == kind:
                xs.append(spec.parameter)
                f1s.append(f1)
                ious.append(iou)
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(xs, f1s, "o-", label="F1")
        ax.plot(xs, ious, "s--", label="IoU")
        ax.axhline(clean_f1, color="gray", lw=0.8, ls=":", label="clean F1")
        ax.set_xlabel("JPEG quality" if kind == "jpeg" else "blur kernel size")
        ax.set_ylabel("score")
        ax.set_ylim(0, 1.05)
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots / f"{kind}.png", dpi=120)
        plt.close(fig)

    print(f"robustness grid written to {csv_path}")
    return EXIT_OK


def _ablation_rows(axis: str):
    if axis == "fusion":
        return [
            (f"{imp}+{rgb}", {"fusion.imperceptible": imp, "fusion.rgb": rgb})
            for imp, rgb in FUSION_VARIANTS
        ]
    if axis == "pooling":
        return [
            (label, {"decoder.schedule": ",".join(schedule_from_label(label))})
            for label in POOLING_SCHEDULE_LABELS
        ]
    if axis == "loss":
        return [
            (label, {"loss.bce": b, "loss.ssim": s, "loss.iou": i})
            for label, (b, s, i) in LOSS_VARIANTS
        ]
    if axis == "backbone":
        return [(preset, {"backbone.preset": preset}) for preset in sorted(BACKBONE_PRESETS)]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    out = _resolve_out(args, f"ablate_{args.axis}")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    from .config import config_from_flat, config_to_flat

    base_flat = config_to_flat(model_cfg, train_cfg)
    for label, overrides in _ablation_rows(args.axis):
        flat = dict(base_flat)
        flat.update(overrides)
        row_model, row_train = config_from_flat(flat)
        run_dir = out / label.replace("+", "_")
        run_dir.mkdir(parents=True, exist_ok=True)
        write_config_file(run_dir / "config.echo", row_model, row_train)
        train_model(row_model, row_train, args.data, run_dir)
        model, ckpt = model_from_checkpoint(run_dir / "ckpt.best")
        eval_rows = _eval_rows(model, ckpt, args.data, "test")
        mean_f1 = float(np.mean([r.f1 for r in eval_rows]))
        mean_iou = float(np.mean([r.iou for r in eval_rows]))
        rows.append((label, mean_f1, mean_iou))
        print(f"{args.axis} ablation {label}: F1 {mean_f1:.4f}, IoU {mean_iou:.4f}")

    csv_path = out / f"ablate_{args.axis}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# axis={args.axis} seed={model_cfg.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["variant", "mean_f1", "mean_iou"])
        for label, f1, iou in rows:
            writer.writerow([label, f"{f1:.6f}", f"{iou:.6f}"])
    print(f"ablation table written to {csv_path}")
    return EXIT_OK


def cmd_dump_features(args) -> int:
    import torch
    from PIL import Image

    model, ckpt = model_from_checkpoint(args.ckpt)
    if not 1 <= args.stage <= 5:
        raise ConfigError(f"stage must be in 1..5, got {args.stage}")
    try:
        image = np.asarray(Image.open(args.image).convert("RGB"))
    except (OSError, ValueError) as e:
        raise DataIOError(f"cannot read image {args.image}: {e}") from e
    size = ckpt.config.get("train.image_size", 64)
    from .train import _resize_image

    img_t = torch.from_numpy(_resize_image(image, size).astype(np.float32)).permute(2, 0, 1)[None]
    feats = model.collect_features(img_t)
    out = _resolve_out(args, "features")
    out.mkdir(parents=True, exist_ok=True)
    streams = ["rgb", "freq", "noise", "fused", "encoder"]
    if args.stream != "all":
        streams = [args.stream]
    count = 0
    for stream in streams:
        fm = feats[stream][args.stage - 1][0]
        for c in range(fm.shape[0]):
            ch = fm[c].numpy()
            lo, hi = float(ch.min()), float(ch.max())
            norm = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
            Image.fromarray((norm * 255).astype(np.uint8), mode="L").save(
                out / f"{stream}_stage{args.stage}_c{c:03d}.png"
            )
            count += 1
    print(f"wrote {count} channel maps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trifuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic forgery dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--splice", type=int, default=40)
    p.add_argument("--copy-move", dest="copy_move", type=int, default=40)
    p.add_argument("--authentic", type=int, default=20)
    p.add_argument("--attacks", default=None, help="comma list, e.g. none,jpeg:80,gaussian_blur:5")
    p.add_argument("--split-counts", default=None, help="train,val,test sizes (default 8:1:1)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", default=None, choices=sorted(BACKBONE_PRESETS))
    p.add_argument("--ckpt", default=None, help="resume from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--dump-masks", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="attack grid evaluation with curves")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("ablate", help="train and score an ablation axis")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True, choices=["fusion", "pooling", "loss", "backbone"])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", default=None, choices=sorted(BACKBONE_PRESETS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-features", help="write per-channel grayscale feature maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--stream", default="all",
                   choices=["all", "rgb", "freq", "noise", "fused", "encoder"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dump_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIOError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TrifuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
