from __future__ import annotations

import math

import torch
import torch.nn as nn


def group_norm(channels: int) -> nn.GroupNorm:
    # per-sample statistics only; the model has no running buffers
    return nn.GroupNorm(math.gcd(8, channels), channels)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by optional group norm and ReLU."""

    def __init__(self, in_channels: int, out_channels: int, padding: int,
                 norm: str):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=padding)
        self.norm1 = group_norm(out_channels) if norm == "group" else nn.Identity()
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=padding)
        self.norm2 = group_norm(out_channels) if norm == "group" else nn.Identity()
        self.relu2 = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.relu1(self.norm1(self.conv1(x)))
        return self.relu2(self.norm2(self.conv2(x)))


def center_crop(x: torch.Tensor, height: int, width: int) -> torch.Tensor:
    top = (x.shape[-2] - height) // 2
    left = (x.shape[-1] - width) // 2
    return x[..., top:top + height, left:left + width]
