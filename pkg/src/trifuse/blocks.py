"""Shared building blocks: squeeze-excite attention and seeded initialization."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import GAP, GMP
from .errors import ConfigError


class SqueezeExcite(nn.Module):
    """Channel attention with a residual shortcut.

    ``out = w * x + x`` where ``w = sigmoid(fc2(relu(fc1(pool(x)))))`` and the
    pooling is global average (GAP) or global max (GMP). The bottleneck width
    is ``channels // reduction`` floored at ``min_hidden``.
    """

    def __init__(self, channels: int, pool: str = GAP, reduction: int = 16, min_hidden: int = 4):
        super().__init__()
        if pool not in (GAP, GMP):
            raise ConfigError(f"unknown pooling mode {pool!r}")
        hidden = max(channels // reduction, min_hidden)
        self.pool = pool
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def reset_parameters_seeded(self, generator: torch.Generator) -> None:
        # zero-init the logit layer: gates start at the neutral 0.5 and never
        # saturate at init regardless of the input scale
        he_conv_init_(self.fc1, generator)
        zero_conv_init_(self.fc2)

    def weights(self, x):
        """Attention weights of shape (B, C, 1, 1), values in (0, 1)."""
        if self.pool == GAP:
            s = x.mean(dim=(2, 3), keepdim=True)
        else:
            s = x.amax(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))

    def forward(self, x):
        w = self.weights(x)
        return w * x + x


def he_conv_init_(conv: nn.Conv2d, generator: torch.Generator) -> None:
    """Fan-in scaled normal weights, zero bias."""
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = math.sqrt(2.0 / fan_in)
    with torch.no_grad():
        conv.weight.normal_(0.0, std, generator=generator)
        if conv.bias is not None:
            conv.bias.zero_()


def zero_conv_init_(conv: nn.Conv2d) -> None:
    """Zero weights and bias: gate logits start at 0, gates at 0.5."""
    with torch.no_grad():
        conv.weight.zero_()
        if conv.bias is not None:
            conv.bias.zero_()


def init_module_params(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic He-style init over the module tree.

    Conv weights get fan-in scaled normals, biases zero; batch norms get
    weight 1 / bias 0. A module exposing ``reset_parameters_seeded`` owns the
    init of its whole subtree (constrained noise filters, gate modules).
    """
    if hasattr(module, "reset_parameters_seeded"):
        module.reset_parameters_seeded(generator)
        return
    if isinstance(module, nn.Conv2d):
        he_conv_init_(module, generator)
    elif isinstance(module, nn.BatchNorm2d):
        with torch.no_grad():
            module.weight.fill_(1.0)
            module.bias.zero_()
        module.reset_running_stats()
    for child in module.children():
        init_module_params(child, generator)
