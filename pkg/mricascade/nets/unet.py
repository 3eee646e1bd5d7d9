from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import ConvBlock, center_crop
from .configs import UNetConfig


class UNet(nn.Module):
    """Contracting/expanding U-Net with concatenation skips.

    In valid mode the encoder features are centre-cropped to the decoder
    resolution before concatenation.
    """

    def __init__(self, config: UNetConfig, in_channels: int = 1):
        super().__init__()
        padding = 0 if config.padding_mode == "valid" else 1
        widths = [config.base_channels * 2**i for i in range(config.depth + 1)]

        self.down = nn.ModuleList()
        channels = in_channels
        for width in widths[:-1]:
            self.down.append(ConvBlock(channels, width, padding, config.norm))
            channels = width
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(channels, widths[-1], padding, config.norm)

        self.upconv = nn.ModuleList()
        self.up = nn.ModuleList()
        for level in reversed(range(config.depth)):
            self.upconv.append(
                nn.ConvTranspose2d(widths[level + 1], widths[level], 2, stride=2))
            self.up.append(
                ConvBlock(2 * widths[level], widths[level], padding,
                          config.norm))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for upconv, block, skip in zip(self.upconv, self.up, reversed(skips)):
            x = upconv(x)
            skip = center_crop(skip, x.shape[-2], x.shape[-1])
            x = block(torch.cat([skip, x], dim=1))
        return torch.sigmoid(self.head(x))
