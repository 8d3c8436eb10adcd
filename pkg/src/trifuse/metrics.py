"""Pixel-overlap metrics and the threshold-sweep evaluation protocol.

Probability maps are binarized at every threshold on the 1/255 grid and the
best score is reported per image, together with the smallest threshold that
achieves it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError

THRESHOLDS = np.arange(256) / 255.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_counts(pred_bin: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred_bin = np.asarray(pred_bin).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred_bin.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred_bin.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred_bin & gt))
    fp = int(np.count_nonzero(pred_bin & ~gt))
    fn = int(np.count_nonzero(~pred_bin & gt))
    tn = int(np.count_nonzero(~pred_bin & ~gt))
    return ConfusionCounts(tp, fp, fn, tn)


def f1_iou(cc: ConfusionCounts) -> tuple[float, float]:
    """F1 = 2tp/(2tp+fn+fp), IoU = tp/(tp+fn+fp).

    Degenerate 0/0 (empty mask and empty prediction) scores 1; a zero
    numerator with a nonzero denominator scores 0.
    """
    denom_f1 = 2 * cc.tp + cc.fn + cc.fp
    if denom_f1 == 0:
        return 1.0, 1.0
    f1 = 2 * cc.tp / denom_f1
    iou = cc.tp / (cc.tp + cc.fn + cc.fp)
    return float(f1), float(iou)


def _suffix_counts(p: np.ndarray, g: np.ndarray):
    """tp/fp arrays over the 256-threshold grid via histogram suffix sums.

    A pixel with value v is predicted positive at threshold k/255 iff
    v >= k/255, i.e. for all k <= ceil(255 v). The tiny guard keeps values
    that sit exactly on the grid from rounding up.
    """
    idx = np.ceil(p.astype(np.float64) * 255.0 - 1e-9).astype(np.int64)
    np.clip(idx, 0, 255, out=idx)
    g = g.astype(bool)
    pos_hist = np.bincount(idx[g], minlength=256)
    neg_hist = np.bincount(idx[~g], minlength=256)
    # pixels with idx >= k are positive at threshold k
    tp = np.cumsum(pos_hist[::-1])[::-1]
    fp = np.cumsum(neg_hist[::-1])[::-1]
    return tp, fp, int(g.sum()), int((~g).sum())


def threshold_sweep(p: np.ndarray, g: np.ndarray, metric: str = "f1") -> tuple[float, float]:
    """Best score over the threshold grid and the smallest threshold
    achieving it."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {g.shape}")
    if metric not in ("f1", "iou"):
        raise ValueError(f"metric must be f1 or iou, got {metric!r}")
    tp, fp, npos, _ = _suffix_counts(p.ravel(), g.ravel())
    fn = npos - tp
    if metric == "f1":
        denom = 2 * tp + fn + fp
        scores = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 1.0)
    else:
        denom = tp + fn + fp
        scores = np.where(denom > 0, tp / np.maximum(denom, 1), 1.0)
    best_k = int(np.argmax(scores))
    return float(scores[best_k]), float(THRESHOLDS[best_k])


def score_at_threshold(p: np.ndarray, g: np.ndarray, t: float, metric: str = "f1"):
    cc = confusion_counts(np.asarray(p) >= t, g)
    f1, iou = f1_iou(cc)
    return f1 if metric == "f1" else iou


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


@dataclass
class MetricRow:
    sample_id: str
    f1: float
    iou: float
    best_threshold: float


def write_report_csv(path, rows: list[MetricRow]) -> None:
    """Per-sample scores plus a trailing mean row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "f1", "iou", "best_threshold"])
        for r in rows:
            writer.writerow([r.sample_id, f"{r.f1:.6f}", f"{r.iou:.6f}", f"{r.best_threshold:.6f}"])
        if rows:
            mean_f1 = float(np.mean([r.f1 for r in rows]))
            mean_iou = float(np.mean([r.iou for r in rows]))
            writer.writerow(["mean", f"{mean_f1:.6f}", f"{mean_iou:.6f}", ""])


def read_report_means(path) -> tuple[float, float]:
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and row[0] == "mean":
                return float(row[1]), float(row[2])
    raise ValueError(f"no mean row in {path}")
