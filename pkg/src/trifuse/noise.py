"""Noise residual stream: constrained prediction-error filters plus fixed
high-pass residual kernels, summed elementwise.

The trainable bank is re-projected before every training forward so each
(out, in) slice is a prediction-error filter: center weight -1, remaining
weights summing to 1. The fixed bank holds the three classic steganalysis
residual kernels, each replicated over the input channels (scaled by 1/3) so
the output stays 3-channel.
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

import numpy as np

from .errors import ContractViolation, ProjectionError

KERNEL_SIZE = 5
_CENTER = KERNEL_SIZE // 2
BAYAR_TOL = 1e-6
# Looser guard used as the forward precondition: catches a missed projection
# (violations are O(1) then) without rejecting finite-difference probes.
FORWARD_GUARD_TOL = 1e-3


def srm_base_kernels(dtype=torch.float32) -> torch.Tensor:
    """The three canonical 5x5 residual filters, shape (3, 5, 5).

    (0) second-order 'KV' kernel over the full 5x5 support, divisor 12;
    (1) 3x3 square Laplacian-like kernel embedded centrally, divisor 4;
    (2) second-order horizontal [1, -2, 1] embedded centrally, divisor 2.
    """
    kv = np.array(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=np.float64,
    ) / 12.0
    square = np.zeros((5, 5), dtype=np.float64)
    square[1:4, 1:4] = np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]], dtype=np.float64) / 4.0
    horiz = np.zeros((5, 5), dtype=np.float64)
    horiz[2, 1:4] = np.array([1, -2, 1], dtype=np.float64) / 2.0
    return torch.from_numpy(np.stack([kv, square, horiz])).to(dtype)


def srm_kernel_bank(dtype=torch.float32) -> torch.Tensor:
    """Fixed convolution bank of shape (out=3, in=3, 5, 5).

    Each output channel applies its base kernel to all three input channels,
    weights divided by 3 so channel replication does not rescale responses.
    """
    base = srm_base_kernels(dtype)
    return (base[:, None, :, :] / 3.0).repeat(1, 3, 1, 1).contiguous()


def bayar_project_(bank: torch.Tensor) -> torch.Tensor:
    """In-place projection onto the prediction-error constraint set.

    Per (out, in) slice: divide the non-center weights by their sum (so they
    sum to 1) and pin the center to -1. Idempotent. Raises ProjectionError if
    a slice's non-center sum is zero within 1e-12; the caller should
    re-randomize that slice.
    """
    with torch.no_grad():
        center = bank[..., _CENTER, _CENTER].clone()
        noncenter_sum = bank.sum(dim=(-2, -1)) - center
        if (noncenter_sum.abs() < 1e-12).any():
            raise ProjectionError("a kernel slice has zero non-center weight sum; re-randomize it")
        bank /= noncenter_sum[..., None, None]
        bank[..., _CENTER, _CENTER] = -1.0
    return bank


def bayar_constraint_violation(bank: torch.Tensor) -> float:
    """Max deviation from the constraint over all slices."""
    center_err = (bank[..., _CENTER, _CENTER] + 1.0).abs().max()
    noncenter = bank.sum(dim=(-2, -1)) - bank[..., _CENTER, _CENTER]
    sum_err = (noncenter - 1.0).abs().max()
    return float(torch.maximum(center_err, sum_err))


class NoiseExtractor(nn.Module):
    """Sum of the constrained trainable conv and the fixed residual conv.

    Both run stride 1, padding 2, no bias, no activation; 3 channels in and
    out. Every slice of both banks is zero-sum after projection, which makes
    the output invariant to constant intensity offsets. Padding replicates
    the border so that invariance (and the zero response to constant images)
    holds right up to the edge.
    """

    def __init__(self):
        super().__init__()
        self.bayar = nn.Parameter(torch.empty(3, 3, KERNEL_SIZE, KERNEL_SIZE))
        # kept in float64 and cast per call so the zero-sums survive dtype changes
        self.register_buffer("srm", srm_kernel_bank(torch.float64))
        self.reset_parameters_seeded(torch.Generator().manual_seed(0))

    def reset_parameters_seeded(self, generator: torch.Generator) -> None:
        # positive init keeps each slice's non-center sum well away from zero,
        # so the projection rescale stays mild and responses stay residual-sized
        with torch.no_grad():
            self.bayar.uniform_(0.5 / 24.0, 1.5 / 24.0, generator=generator)
        self.project()

    def project(self) -> None:
        """Apply the kernel constraint; call before each training forward."""
        bayar_project_(self.bayar.data)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if bayar_constraint_violation(self.bayar.data) > FORWARD_GUARD_TOL:
            raise ContractViolation("constrained kernels used without projection")
        padded = F.pad(img, (_CENTER,) * 4, mode="replicate")
        return F.conv2d(padded, self.bayar) + F.conv2d(padded, self.srm.to(img.dtype))
