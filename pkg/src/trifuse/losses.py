"""Hybrid supervision loss: BCE + structural-similarity + soft-IoU.

BCE treats all pixels equally; the SSIM term weights structure (and thereby
boundaries) via local window statistics; the soft-IoU term emphasizes large
foreground regions. Each of the six supervised outputs gets the sum of the
enabled components; the training loss sums over outputs.

All losses accept probability maps shaped (H, W), (1, H, W) or (B, 1, H, W)
and reduce to a scalar (mean over batch; BCE additionally means over pixels).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .errors import ShapeError

BCE_EPS = 1e-7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class LossFlags(NamedTuple):
    bce: bool = True
    ssim: bool = True
    iou: bool = True


def _as_nchw(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t[None]
    if t.dim() == 4:
        return t
    raise ShapeError(f"expected 2-4 dims, got shape {tuple(t.shape)}")


def _pair(p: torch.Tensor, g: torch.Tensor):
    p, g = _as_nchw(p), _as_nchw(g)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {tuple(p.shape)} vs ground truth {tuple(g.shape)}")
    return p, g


def bce_loss(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Per-pixel mean binary cross entropy; p clamped to [eps, 1-eps]."""
    p, g = _pair(p, g)
    p = p.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
                    dtype=torch.float32, device=None) -> torch.Tensor:
    """Normalized 2-D Gaussian window, shape (1, 1, size, size)."""
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g1 = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g1 = g1 / g1.sum()
    win = torch.outer(g1, g1)
    return (win / win.sum())[None, None]


def ssim_loss(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """1 - mean windowed SSIM; in [0, 2].

    Maps smaller than the window fall back to whole-map statistics (one
    uniform window).
    """
    p, g = _pair(p, g)
    h, w = p.shape[-2:]
    if min(h, w) < SSIM_WINDOW:
        mu_p = p.mean(dim=(1, 2, 3))
        mu_g = g.mean(dim=(1, 2, 3))
        var_p = p.var(dim=(1, 2, 3), unbiased=False)
        var_g = g.var(dim=(1, 2, 3), unbiased=False)
        cov = ((p - mu_p.view(-1, 1, 1, 1)) * (g - mu_g.view(-1, 1, 1, 1))).mean(dim=(1, 2, 3))
        ssim = ((2 * mu_p * mu_g + SSIM_C1) * (2 * cov + SSIM_C2)) / (
            (mu_p ** 2 + mu_g ** 2 + SSIM_C1) * (var_p + var_g + SSIM_C2)
        )
        return (1.0 - ssim).mean()
    win = gaussian_window(dtype=p.dtype, device=p.device)
    mu_p = F.conv2d(p, win)
    mu_g = F.conv2d(g, win)
    var_p = F.conv2d(p * p, win) - mu_p ** 2
    var_g = F.conv2d(g * g, win) - mu_g ** 2
    cov = F.conv2d(p * g, win) - mu_p * mu_g
    ssim_map = ((2 * mu_p * mu_g + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_p ** 2 + mu_g ** 2 + SSIM_C1) * (var_p + var_g + SSIM_C2)
    )
    return 1.0 - ssim_map.mean()


def iou_loss(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """1 - (sum of products / sum of soft unions), per sample then averaged.

    An empty prediction against an empty mask contributes zero loss.
    """
    p, g = _pair(p, g)
    inter = (p * g).sum(dim=(1, 2, 3))
    union = (p + g - p * g).sum(dim=(1, 2, 3))
    per = torch.zeros_like(union)
    nonempty = union > 0
    if nonempty.any():
        per[nonempty] = 1.0 - inter[nonempty] / union[nonempty]
    return per.mean()


class HybridLoss(NamedTuple):
    total: torch.Tensor
    bce: torch.Tensor
    ssim: torch.Tensor
    iou: torch.Tensor


def hybrid_loss(p: torch.Tensor, g: torch.Tensor, flags: LossFlags = LossFlags()) -> HybridLoss:
    """Sum of the enabled components for one probability map."""
    p, g = _pair(p, g)
    zero = p.new_zeros(())
    l_bce = bce_loss(p, g) if flags.bce else zero
    l_ssim = ssim_loss(p, g) if flags.ssim else zero
    l_iou = iou_loss(p, g) if flags.iou else zero
    return HybridLoss(l_bce + l_ssim + l_iou, l_bce, l_ssim, l_iou)


@dataclass
class LossBreakdown:
    """Component sums over the six supervised outputs (torch scalars)."""

    bce: torch.Tensor
    ssim: torch.Tensor
    iou: torch.Tensor
    total: torch.Tensor
    per_output: list


def total_loss(preds, gt: torch.Tensor, flags: LossFlags = LossFlags()) -> LossBreakdown:
    """Hybrid loss summed over all supervised logit maps.

    ``preds`` is a Predictions object or a list of logit tensors; ``gt`` is
    the binary mask at the same resolution.
    """
    logits = preds.all_logits() if hasattr(preds, "all_logits") else list(preds)
    gt = _as_nchw(gt)
    per_output = []
    parts = []
    for logit in logits:
        hl = hybrid_loss(torch.sigmoid(_as_nchw(logit)), gt, flags)
        per_output.append(hl.total)
        parts.append(hl)
    bce = sum(h.bce for h in parts)
    ssim = sum(h.ssim for h in parts)
    iou = sum(h.iou for h in parts)
    total = sum(h.total for h in parts)
    return LossBreakdown(bce=bce, ssim=ssim, iou=iou, total=total, per_output=per_output)
