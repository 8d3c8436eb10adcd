"""Training and evaluation loops.

Adam with weight decay, learning rate halved whenever the validation loss
fails to improve for ``plateau_patience`` consecutive epochs, constrained
noise kernels re-projected before every forward pass, and the checkpoint
with the best validation loss kept alongside the last one. Every run is
reproducible from (config, seed): data order, augmentation, and init all
derive from the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import Checkpoint, check_config_compatible, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, config_to_flat
from .data import SampleRecord, augment_flip, load_dataset
from .errors import ConfigError, NumericalError
from .losses import LossFlags, total_loss
from .metrics import MetricRow, threshold_sweep
from .model import TriFuseNet, build_model


def loss_flags(cfg: ModelConfig) -> LossFlags:
    return LossFlags(bce=cfg.loss_bce, ssim=cfg.loss_ssim, iou=cfg.loss_iou)


def _resize_image(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[0] == size and image.shape[1] == size:
        return image
    return np.asarray(Image.fromarray(image).resize((size, size), Image.BILINEAR))


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    if mask.shape[0] == size and mask.shape[1] == size:
        return mask
    pil = Image.fromarray((mask * 255).astype(np.uint8))
    return (np.asarray(pil.resize((size, size), Image.NEAREST)) > 127).astype(np.uint8)


def _collate(records: list[SampleRecord], size: int):
    imgs = np.stack([_resize_image(r.image, size) for r in records]).astype(np.float32)
    masks = np.stack([_resize_mask(r.mask, size) for r in records]).astype(np.float32)
    img_t = torch.from_numpy(imgs).permute(0, 3, 1, 2).contiguous()
    mask_t = torch.from_numpy(masks)[:, None]
    return img_t, mask_t


@dataclass
class TrainSummary:
    epochs_run: int
    best_val_loss: float
    best_epoch: int
    final_lr: float
    log_path: Path


class PlateauHalver:
    """Halves the learning rate after ``patience`` consecutive epochs without
    a new best validation loss (strict improvement resets the window)."""

    def __init__(self, lr: float, patience: int):
        self.lr = lr
        self.patience = patience
        self.best = float("inf")
        self.since_improve = 0

    def update(self, val_loss: float) -> bool:
        """Returns True when this epoch set a new best."""
        if val_loss < self.best:
            self.best = val_loss
            self.since_improve = 0
            return True
        self.since_improve += 1
        if self.since_improve >= self.patience:
            self.lr /= 2.0
            self.since_improve = 0
        return False


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_model(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data_dir,
    run_dir,
    resume_from=None,
) -> TrainSummary:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        lock.touch(exist_ok=False)
    except FileExistsError:
        raise ConfigError(f"run directory {run_dir} is locked by another training run")
    try:
        return _train_locked(model_cfg, train_cfg, data_dir, run_dir, resume_from)
    finally:
        lock.unlink(missing_ok=True)


def _train_locked(model_cfg, train_cfg, data_dir, run_dir, resume_from):
    records, splits = load_dataset(data_dir)
    train_ids = splits["train"]
    val_ids = splits["val"] or splits["train"]
    if not train_ids:
        raise ConfigError(f"dataset {data_dir} has an empty train split")

    torch.manual_seed(model_cfg.seed)
    model = build_model(model_cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay
    )
    flags = loss_flags(model_cfg)
    flat_cfg = config_to_flat(model_cfg, train_cfg)

    start_epoch = 1
    plateau = PlateauHalver(train_cfg.lr, train_cfg.plateau_patience)
    best_epoch = 0
    log_rows = []
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        check_config_compatible(ckpt.config, flat_cfg)
        model.load_state_dict(ckpt.model_state)
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        start_epoch = ckpt.epoch + 1
        plateau.best = ckpt.best_val_loss
        plateau.lr = ckpt.extra.get("lr", plateau.lr)
        plateau.since_improve = ckpt.extra.get("since_improve", 0)
        best_epoch = ckpt.extra.get("best_epoch", 0)
        _set_lr(optimizer, plateau.lr)

    epoch_rng = np.random.default_rng(model_cfg.seed + 1)
    # skip the permutation draws already consumed by earlier epochs on resume
    for _ in range(start_epoch - 1):
        epoch_rng.permutation(len(train_ids))
        if train_cfg.flip_augment:
            epoch_rng.random(2 * len(train_ids))

    epoch = start_epoch - 1
    for epoch in range(start_epoch, train_cfg.epochs + 1):
        model.train()
        perm = epoch_rng.permutation(len(train_ids))
        flip_draws = epoch_rng.random(2 * len(train_ids)) if train_cfg.flip_augment else None
        sums = {"bce": 0.0, "ssim": 0.0, "iou": 0.0, "total": 0.0}
        n_seen = 0
        for lo in range(0, len(train_ids), train_cfg.batch_size):
            batch_idx = perm[lo : lo + train_cfg.batch_size]
            batch = []
            for j, idx in enumerate(batch_idx):
                rec = records[train_ids[int(idx)]]
                if flip_draws is not None:
                    k = lo + j
                    flip_rng = _FixedDraws(flip_draws[2 * k : 2 * k + 2])
                    rec = augment_flip(rec, flip_rng)
                batch.append(rec)
            imgs, masks = _collate(batch, train_cfg.image_size)
            model.project_constraints()
            preds = model(imgs)
            breakdown = total_loss(preds, masks, flags)
            if not torch.isfinite(breakdown.total):
                _dump_diagnostics(run_dir, epoch, breakdown)
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            bs = len(batch)
            n_seen += bs
            sums["bce"] += breakdown.bce.item() * bs
            sums["ssim"] += breakdown.ssim.item() * bs
            sums["iou"] += breakdown.iou.item() * bs
            sums["total"] += breakdown.total.item() * bs
        model.project_constraints()

        val_total = _validation_loss(model, records, val_ids, train_cfg, flags)
        if not np.isfinite(val_total):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")

        if plateau.update(val_total):
            best_epoch = epoch
            _save(run_dir / "ckpt.best", flat_cfg, model, optimizer, epoch, plateau.best,
                  plateau.lr, best_epoch, plateau.since_improve)
        else:
            _set_lr(optimizer, plateau.lr)

        log_rows.append(
            {
                "epoch": epoch,
                "train_bce": sums["bce"] / n_seen,
                "train_ssim": sums["ssim"] / n_seen,
                "train_iou": sums["iou"] / n_seen,
                "train_total": sums["total"] / n_seen,
                "val_total": val_total,
                "lr": plateau.lr,
            }
        )
        _save(run_dir / "ckpt.last", flat_cfg, model, optimizer, epoch, plateau.best,
              plateau.lr, best_epoch, plateau.since_improve)

    log_path = run_dir / "log.csv"
    _write_log(log_path, log_rows, append=start_epoch > 1)
    return TrainSummary(
        epochs_run=epoch,
        best_val_loss=plateau.best,
        best_epoch=best_epoch,
        final_lr=plateau.lr,
        log_path=log_path,
    )


class _FixedDraws:
    """Feeds pre-drawn uniforms to augment_flip for reproducible batching."""

    def __init__(self, draws):
        self._draws = list(draws)

    def random(self):
        return self._draws.pop(0)


def _validation_loss(model, records, ids, train_cfg, flags) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for lo in range(0, len(ids), train_cfg.batch_size):
            batch = [records[i] for i in ids[lo : lo + train_cfg.batch_size]]
            imgs, masks = _collate(batch, train_cfg.image_size)
            breakdown = total_loss(model(imgs), masks, flags)
            total += breakdown.total.item() * len(batch)
    model.train()
    return total / max(len(ids), 1)


def _save(path, flat_cfg, model, optimizer, epoch, best_val, lr, best_epoch, since_improve):
    save_checkpoint(
        path,
        Checkpoint(
            config=flat_cfg,
            epoch=epoch,
            best_val_loss=best_val,
            model_state={k: v for k, v in model.state_dict().items()},
            optimizer_state=optimizer.state_dict(),
            extra={"lr": lr, "best_epoch": best_epoch, "since_improve": since_improve},
        ),
    )


def _write_log(path, rows, append=False):
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(
                ["epoch", "train_bce", "train_ssim", "train_iou", "train_total", "val_total", "lr"]
            )
        for r in rows:
            writer.writerow(
                [
                    r["epoch"],
                    f"{r['train_bce']:.8f}",
                    f"{r['train_ssim']:.8f}",
                    f"{r['train_iou']:.8f}",
                    f"{r['train_total']:.8f}",
                    f"{r['val_total']:.8f}",
                    f"{r['lr']:.10g}",
                ]
            )


def _dump_diagnostics(run_dir, epoch, breakdown):
    path = Path(run_dir) / "diagnostics.txt"
    lines = [
        f"epoch: {epoch}",
        f"bce: {breakdown.bce.item()!r}",
        f"ssim: {breakdown.ssim.item()!r}",
        f"iou: {breakdown.iou.item()!r}",
        f"total: {breakdown.total.item()!r}",
    ]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------


def model_from_checkpoint(path) -> tuple[TriFuseNet, Checkpoint]:
    from .config import config_from_flat

    ckpt = load_checkpoint(path)
    model_cfg, _ = config_from_flat(ckpt.config)
    model = TriFuseNet(model_cfg)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model, ckpt


def predict_probability(model: TriFuseNet, image: np.ndarray, image_size: int) -> np.ndarray:
    """Final-head probability map, resized back to the input resolution."""
    h, w = image.shape[:2]
    resized = _resize_image(image, image_size)
    img_t = torch.from_numpy(resized.astype(np.float32)).permute(2, 0, 1)[None]
    model.eval()
    with torch.no_grad():
        preds = model(img_t)
        prob = torch.sigmoid(preds.final_logit)
        if prob.shape[-2:] != (h, w):
            prob = torch.nn.functional.interpolate(
                prob, size=(h, w), mode="bilinear", align_corners=False
            )
    return prob[0, 0].numpy().astype(np.float64)


def evaluate_records(model, records: dict, ids: list, image_size: int) -> list[MetricRow]:
    rows = []
    for sample_id in ids:
        rec = records[sample_id]
        prob = predict_probability(model, rec.image, image_size)
        f1, t1 = threshold_sweep(prob, rec.mask, "f1")
        iou, _ = threshold_sweep(prob, rec.mask, "iou")
        rows.append(MetricRow(sample_id=sample_id, f1=f1, iou=iou, best_threshold=t1))
    return rows
