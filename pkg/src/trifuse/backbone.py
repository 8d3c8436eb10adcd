"""Staged VGG-style feature extractor shared by the three encoder streams.

Five stages of 3x3 conv + ReLU blocks with 2x2 max pooling between stages.
Stage outputs are tapped *before* each pool, so stage 1 is full resolution
and stage i has spatial size (H / 2^(i-1), W / 2^(i-1)).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, InputError, ShapeError

BACKBONE_PRESETS = {
    "vgg16": ((64, 128, 256, 512, 512), (2, 2, 3, 3, 3)),
    "vgg11": ((64, 128, 256, 512, 512), (1, 1, 2, 2, 2)),
    "desk": ((8, 16, 32, 64, 64), (1, 1, 1, 1, 1)),
}


@dataclass(frozen=True)
class StageConfig:
    stage_channels: tuple
    convs_per_stage: tuple
    input_channels: int = 3

    def __post_init__(self):
        if len(self.stage_channels) != 5 or len(self.convs_per_stage) != 5:
            raise ConfigError("stage_channels and convs_per_stage must have length 5")
        if any(c < 1 for c in self.stage_channels) or any(k < 1 for k in self.convs_per_stage):
            raise ConfigError("all stage sizes must be >= 1")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")


def make_stage_config(preset: str, input_channels: int = 3) -> StageConfig:
    if preset not in BACKBONE_PRESETS:
        raise ConfigError(f"unknown backbone preset {preset!r}; options: {sorted(BACKBONE_PRESETS)}")
    channels, convs = BACKBONE_PRESETS[preset]
    return StageConfig(channels, convs, input_channels)


def check_backbone_input(x: torch.Tensor, channels: int | None = None) -> None:
    if x.dim() != 4:
        raise ShapeError(f"expected a (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 16 != 0 or w % 16 != 0:
        raise ShapeError(f"spatial size ({h}, {w}) must be divisible by 16")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"expected {channels} input channels, got {x.shape[1]}")
    if not torch.isfinite(x).all():
        raise InputError("input contains non-finite values")


class StagedBackbone(nn.Module):
    """Stages ``start_stage..5``; passing ``start_stage=2`` builds the tail
    used when stage 1 is produced by an external extractor."""

    def __init__(self, cfg: StageConfig, start_stage: int = 1):
        super().__init__()
        if not 1 <= start_stage <= 5:
            raise ConfigError(f"start_stage must be in 1..5, got {start_stage}")
        self.cfg = cfg
        self.start_stage = start_stage
        in_ch = cfg.input_channels if start_stage == 1 else cfg.stage_channels[start_stage - 2]
        stages = []
        for i in range(start_stage, 6):
            out_ch = cfg.stage_channels[i - 1]
            layers = []
            c = in_ch
            for _ in range(cfg.convs_per_stage[i - 1]):
                layers.append(nn.Conv2d(c, out_ch, 3, padding=1))
                layers.append(nn.ReLU())
                c = out_ch
            stages.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.pool = nn.MaxPool2d(2, 2)

    def forward(self, x) -> list:
        if self.start_stage == 1:
            check_backbone_input(x, self.cfg.input_channels)
        feats = []
        for j, stage in enumerate(self.stages):
            if j > 0 or self.start_stage > 1:
                x = self.pool(x)
            x = stage(x)
            feats.append(x)
        return feats
