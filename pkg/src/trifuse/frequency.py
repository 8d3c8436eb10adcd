"""Frequency-domain feature stream.

Pipeline: YCbCr conversion -> 2x bilinear upsample -> blockwise orthonormal
DCT-II per color channel -> band rearrangement (each output channel collects
one frequency band across tiles) -> per-channel normalization ->
squeeze-excite recalibration with shortcut -> resize back to input
resolution. The result carries 3 * (patch/block)^2 channels (48 for the
default 8/2 geometry). A 1x1 conv + batch norm then projects it to the
backbone's stage-1 width.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import SqueezeExcite
from .config import DctConfig
from .errors import InputError, ShapeError

NORM_EPS = 1e-6


def rgb_to_ycbcr(img: torch.Tensor) -> torch.Tensor:
    """Full-range BT.601 conversion of a (B, 3, H, W) tensor of [0, 255] values.

    Outputs are not clamped: chroma of saturated inputs may slightly exceed
    255 (e.g. pure red gives Cr = 255.5).
    """
    if img.dim() != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W), got {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise InputError("image contains non-finite values")
    if img.min() < 0 or img.max() > 255:
        raise InputError("image values must lie in [0, 255]")
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return torch.cat([y, cb, cr], dim=1)


def dct_matrix(n: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Orthonormal DCT-II basis: row k is the k-th frequency."""
    x = torch.arange(n, dtype=dtype, device=device)
    k = x.reshape(n, 1)
    mat = torch.cos(torch.pi * (2.0 * x + 1.0) * k / (2.0 * n)) * torch.sqrt(
        torch.tensor(2.0 / n, dtype=dtype, device=device)
    )
    mat[0, :] = 1.0 / torch.sqrt(torch.tensor(float(n), dtype=dtype, device=device))
    return mat


def blockwise_dct(x: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Replace every patch_size x patch_size tile with its orthonormal 2-D
    DCT-II coefficients, in place within the tile grid."""
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    n = patch_size
    h, w = x.shape[-2:]
    if h % n != 0 or w % n != 0:
        raise ShapeError(f"spatial size ({h}, {w}) not divisible by patch size {n}")
    b, c = x.shape[:2]
    d = dct_matrix(n, dtype=x.dtype, device=x.device)
    t = x.reshape(b, c, h // n, n, w // n, n).permute(0, 1, 2, 4, 3, 5)
    coeffs = torch.matmul(d, torch.matmul(t, d.T))
    return coeffs.permute(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


def frequency_rearrange(x: torch.Tensor, patch_size: int, block_size: int) -> torch.Tensor:
    """Regroup tile coefficients so each channel holds one frequency band.

    Every patch's coefficient grid splits into (patch/block)^2 blocks of
    block_size x block_size cells; the block at grid position (p, q) lands in
    channel p * (patch/block) + q at that patch's location. Channel 0 is the
    lowest band. Spatial size shrinks by block/patch per axis; channel count
    multiplies by (patch/block)^2 with input channels kept group-contiguous.
    """
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    n, m = patch_size, block_size
    if n % m != 0:
        raise ShapeError(f"patch size {n} not divisible by block size {m}")
    h, w = x.shape[-2:]
    if h % n != 0 or w % n != 0:
        raise ShapeError(f"spatial size ({h}, {w}) not divisible by patch size {n}")
    b, c = x.shape[:2]
    g = n // m
    t = x.reshape(b, c, h // n, g, m, w // n, g, m)
    t = t.permute(0, 1, 3, 6, 2, 4, 5, 7)
    return t.reshape(b, c * g * g, (h // n) * m, (w // n) * m).contiguous()


def inverse_rearrange(x: torch.Tensor, patch_size: int, block_size: int) -> torch.Tensor:
    """Exact inverse of :func:`frequency_rearrange` (pure index shuffle)."""
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    n, m = patch_size, block_size
    if n % m != 0:
        raise ShapeError(f"patch size {n} not divisible by block size {m}")
    g = n // m
    bs, cg, hp, wp = x.shape
    if cg % (g * g) != 0:
        raise ShapeError(f"channel count {cg} not divisible by {g * g}")
    if hp % m != 0 or wp % m != 0:
        raise ShapeError(f"spatial size ({hp}, {wp}) not divisible by block size {m}")
    c = cg // (g * g)
    t = x.reshape(bs, c, g, g, hp // m, m, wp // m, m)
    t = t.permute(0, 1, 4, 2, 5, 6, 3, 7)
    return t.reshape(bs, c, (hp // m) * n, (wp // m) * n).contiguous()


def channelwise_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Zero-mean unit-variance per sample and channel over the spatial dims.

    Constant channels map to all zeros (the eps keeps the division finite).
    """
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    mean = x.mean(dim=(2, 3), keepdim=True)
    std = x.std(dim=(2, 3), unbiased=False, keepdim=True)
    return (x - mean) / (std + eps)


class DctFeatureExtractor(nn.Module):
    """Produces the multi-band frequency map at input resolution.

    The rearranged grid lives at half resolution (2x upsample then 1/(patch /
    block) shrink with the default geometry); a final bilinear resize restores
    the input size so all streams stay spatially aligned.
    """

    def __init__(self, cfg: DctConfig | None = None):
        super().__init__()
        self.cfg = cfg or DctConfig()
        self.se = SqueezeExcite(self.cfg.output_channels)

    @property
    def output_channels(self) -> int:
        return self.cfg.output_channels

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        h, w = img.shape[-2:]
        if h % 16 != 0 or w % 16 != 0:
            raise ShapeError(f"spatial size ({h}, {w}) must be divisible by 16")
        x = rgb_to_ycbcr(img)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = blockwise_dct(x, self.cfg.patch_size)
        x = frequency_rearrange(x, self.cfg.patch_size, self.cfg.block_size)
        x = channelwise_normalize(x)
        x = self.se(x)
        return F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)


class FrequencyStage1(nn.Module):
    """1x1 conv + batch norm projecting the band map to the stage-1 width."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return self.bn(self.conv(x))
