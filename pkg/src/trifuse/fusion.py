"""Per-stage fusion of the three encoder streams.

The two visually-imperceptible streams (frequency, noise) are fused by a
dual-attention block: a spatial branch and a channel branch each produce a
pairwise softmax over the two modalities, and an intermediate 1x1-conv branch
is added into both. The RGB stream then gates the result via guided
attention: ``out = rgb * fused + rgb``. Plain add / concat variants of both
steps are kept for ablations.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import he_conv_init_, zero_conv_init_
from .config import FUSION_IMPERCEPTIBLE_MODES, FUSION_RGB_MODES
from .errors import ConfigError, ShapeError


def modality_softmax(a: torch.Tensor, b: torch.Tensor):
    """Elementwise pairwise softmax, stabilized by the elementwise max.

    Returns weights (w_a, w_b) with w_a + w_b = 1.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    m = torch.maximum(a, b)
    ea = torch.exp(a - m)
    eb = torch.exp(b - m)
    z = ea + eb
    return ea / z, eb / z


def guided_attention(rgb: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
    """RGB-gated residual: ``rgb * fused + rgb``."""
    if rgb.shape != fused.shape:
        raise ShapeError(f"shape mismatch: {tuple(rgb.shape)} vs {tuple(fused.shape)}")
    return rgb * fused + rgb


class CrossModalDualAttention(nn.Module):
    """Spatial + channel pairwise-softmax fusion of two same-shape streams."""

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        hidden = max(c // 2, 1)
        self.reduce = nn.Conv2d(2 * c, c, 1)
        self.spatial_a = nn.Sequential(
            nn.Conv2d(2 * c, hidden, 1), nn.ReLU(), nn.Conv2d(hidden, 1, 1)
        )
        self.spatial_b = nn.Sequential(
            nn.Conv2d(2 * c, hidden, 1), nn.ReLU(), nn.Conv2d(hidden, 1, 1)
        )
        self.channel_a = nn.Conv2d(2 * c, c, 1)
        self.channel_b = nn.Conv2d(2 * c, c, 1)

    def reset_parameters_seeded(self, generator: torch.Generator) -> None:
        # zero-init every attention logit conv: both softmax branches start at
        # the neutral 0.5/0.5 split whatever the feature scale
        he_conv_init_(self.reduce, generator)
        he_conv_init_(self.spatial_a[0], generator)
        he_conv_init_(self.spatial_b[0], generator)
        zero_conv_init_(self.spatial_a[2])
        zero_conv_init_(self.spatial_b[2])
        zero_conv_init_(self.channel_a)
        zero_conv_init_(self.channel_b)

    def attention_weights(self, freq, noise):
        """(spatial_wa, spatial_wb, channel_wa, channel_wb); spatial weights
        are (B, 1, H, W), channel weights (B, C, 1, 1)."""
        cat = torch.cat([freq, noise], dim=1)
        swa, swb = modality_softmax(self.spatial_a(cat), self.spatial_b(cat))
        ca = self.channel_a(cat).mean(dim=(2, 3), keepdim=True)
        cb = self.channel_b(cat).mean(dim=(2, 3), keepdim=True)
        cwa, cwb = modality_softmax(ca, cb)
        return swa, swb, cwa, cwb

    def forward(self, freq, noise):
        if freq.shape != noise.shape:
            raise ShapeError(f"shape mismatch: {tuple(freq.shape)} vs {tuple(noise.shape)}")
        cat = torch.cat([freq, noise], dim=1)
        inner = self.reduce(cat)
        swa, swb, cwa, cwb = self.attention_weights(freq, noise)
        f_spatial = swa * freq + swb * noise + inner
        f_channel = cwa * freq + cwb * noise + inner
        return f_spatial + f_channel


class StageFusion(nn.Module):
    """One encoder stage's fusion with selectable strategies.

    ``imperceptible`` fuses frequency with noise (add | cat | cmda); ``rgb``
    folds the RGB features in (add | cat | ga). The default (cmda, ga) pair
    is the full attention path.
    """

    def __init__(self, channels: int, imperceptible: str = "cmda", rgb: str = "ga"):
        super().__init__()
        if imperceptible not in FUSION_IMPERCEPTIBLE_MODES:
            raise ConfigError(f"unknown imperceptible fusion mode {imperceptible!r}")
        if rgb not in FUSION_RGB_MODES:
            raise ConfigError(f"unknown rgb fusion mode {rgb!r}")
        self.imperceptible_mode = imperceptible
        self.rgb_mode = rgb
        if imperceptible == "cmda":
            self.cmda = CrossModalDualAttention(channels)
        elif imperceptible == "cat":
            self.imp_reduce = nn.Conv2d(2 * channels, channels, 1)
        if rgb == "cat":
            self.rgb_reduce = nn.Conv2d(2 * channels, channels, 1)

    def fuse_imperceptible(self, freq, noise):
        if freq.shape != noise.shape:
            raise ShapeError(f"shape mismatch: {tuple(freq.shape)} vs {tuple(noise.shape)}")
        if self.imperceptible_mode == "add":
            return freq + noise
        if self.imperceptible_mode == "cat":
            return self.imp_reduce(torch.cat([freq, noise], dim=1))
        return self.cmda(freq, noise)

    def forward(self, rgb, freq, noise):
        fused = self.fuse_imperceptible(freq, noise)
        if rgb.shape != fused.shape:
            raise ShapeError(f"shape mismatch: {tuple(rgb.shape)} vs {tuple(fused.shape)}")
        if self.rgb_mode == "add":
            return rgb + fused
        if self.rgb_mode == "cat":
            return self.rgb_reduce(torch.cat([rgb, fused], dim=1))
        return guided_attention(rgb, fused)
