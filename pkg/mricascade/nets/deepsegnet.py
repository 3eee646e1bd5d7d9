from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import ConvBlock
from .configs import DeepSegNetConfig


class DecoderStage(nn.Module):

    def __init__(self, in_channels: int, out_channels: int, norm: str):
        super().__init__()
        self.upconv = nn.ConvTranspose2d(in_channels, out_channels, 2, stride=2)
        self.block = ConvBlock(out_channels, out_channels, 1, norm)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.block(self.upconv(x) + skip)


class DeepSegNet(nn.Module):
    """Same-padding encoder-decoder whose decoder adds encoder features."""

    def __init__(self, config: DeepSegNetConfig, in_channels: int = 1):
        super().__init__()
        widths = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.encoder = nn.ModuleList()
        channels = in_channels
        for width in widths[:-1]:
            self.encoder.append(ConvBlock(channels, width, 1, config.norm))
            channels = width
        self.pool = nn.MaxPool2d(2)
        self.bridge = ConvBlock(channels, widths[-1], 1, config.norm)
        self.decoder = nn.ModuleList(
            DecoderStage(widths[level + 1], widths[level], config.norm)
            for level in reversed(range(config.depth)))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bridge(x)
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = stage(x, skip)
        return torch.sigmoid(self.head(x))
