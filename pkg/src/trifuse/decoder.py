"""Five-stage top-down decoder with per-stage squeeze-excite attention.

Each stage fuses its encoder features with the upsampled output of the stage
above (plain addition), passes them through a squeeze-excite block whose
pooling follows the configured schedule (max pooling in the low stages keeps
boundaries sharp, average pooling in the high stages recovers whole regions),
then a 1x1 conv + BN + ReLU block with 2x bilinear upsampling. Every stage
feeds a 1-channel side head; the stage-1 output also feeds the final head.
All six logit maps are emitted at input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import StageConfig
from .blocks import SqueezeExcite
from .config import GAP, GMP
from .errors import ConfigError, ShapeError


def fuse_skip(enc: torch.Tensor, dec_above: torch.Tensor | None = None) -> torch.Tensor:
    """Additive skip fusion; the top stage has no decoder input above it."""
    if dec_above is None:
        return enc
    if enc.shape != dec_above.shape:
        raise ShapeError(
            f"skip shapes differ: {tuple(enc.shape)} vs {tuple(dec_above.shape)}"
        )
    return enc + dec_above


class DecoderBlock(nn.Module):
    """1x1 conv -> BN -> ReLU, then optional 2x bilinear upsample."""

    def __init__(self, in_channels: int, out_channels: int, upsample: bool):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1)
        self.bn = nn.BatchNorm2d(out_channels)
        self.upsample = upsample

    def forward(self, x):
        y = F.relu(self.bn(self.conv(x)))
        if self.upsample:
            y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
        return y


@dataclass
class Predictions:
    """Six supervised logit maps, all (B, 1, H, W) at input resolution.

    Output k=1 is the final head; k=i+1 is the stage-i side head.
    """

    side_logits: list
    final_logit: torch.Tensor

    def all_logits(self) -> list:
        return [self.final_logit] + list(self.side_logits)


class Decoder(nn.Module):
    def __init__(self, cfg: StageConfig, schedule=(GMP, GMP, GAP, GAP, GAP)):
        super().__init__()
        if len(schedule) != 5 or any(m not in (GAP, GMP) for m in schedule):
            raise ConfigError(f"schedule must be 5 entries of GAP/GMP, got {schedule!r}")
        self.schedule = tuple(schedule)
        ch = cfg.stage_channels
        self.attn = nn.ModuleList(
            [SqueezeExcite(ch[i], pool=self.schedule[i]) for i in range(5)]
        )
        # stage i>=2 projects to the stage below's width and upsamples;
        # stage 1 keeps its width and resolution
        out_ch = [ch[0]] + [ch[i - 1] for i in range(1, 5)]
        self.blocks = nn.ModuleList(
            [DecoderBlock(ch[i], out_ch[i], upsample=(i >= 1)) for i in range(5)]
        )
        self.side_heads = nn.ModuleList([nn.Conv2d(out_ch[i], 1, 1) for i in range(5)])
        self.final_head = nn.Conv2d(out_ch[0], 1, 1)

    def forward(self, feats: list) -> Predictions:
        if len(feats) != 5:
            raise ShapeError(f"expected 5 stage features, got {len(feats)}")
        h, w = feats[0].shape[-2:]
        side = [None] * 5
        dec = None
        for i in range(4, -1, -1):
            fused = fuse_skip(feats[i], dec)
            attended = self.attn[i](fused)
            dec = self.blocks[i](attended)
            logit = self.side_heads[i](dec)
            if logit.shape[-2:] != (h, w):
                logit = F.interpolate(logit, size=(h, w), mode="bilinear", align_corners=False)
            side[i] = logit
        final = self.final_head(dec)
        return Predictions(side_logits=side, final_logit=final)
