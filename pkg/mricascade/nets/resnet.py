"""Pre-activation bottleneck residual classifier.

Each bottleneck computes ``shortcut(x) + F(x)`` where ``F`` is
norm-ReLU-conv1 (1x1), norm-ReLU-conv2 (3x3), norm-ReLU-conv3 (1x1); the
shortcut is the identity unless the block changes width or stride. The
``resnet50`` layout has 3+4+6+3 blocks, i.e. 48 branch convolutions, plus the
stem convolution and the dense head.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import group_norm
from .configs import ResNetConfig

STAGE_BLOCKS = {
    "resnet50": (3, 4, 6, 3),
    "resnet_mini": (1, 1, 1, 1),
}
EXPANSION = 4


class Bottleneck(nn.Module):

    def __init__(self, in_channels: int, mid_channels: int, stride: int):
        super().__init__()
        out_channels = mid_channels * EXPANSION
        self.norm1 = group_norm(in_channels)
        self.relu1 = nn.ReLU()
        self.conv1 = nn.Conv2d(in_channels, mid_channels, 1, bias=False)
        self.norm2 = group_norm(mid_channels)
        self.relu2 = nn.ReLU()
        self.conv2 = nn.Conv2d(mid_channels,
                               mid_channels,
                               3,
                               stride=stride,
                               padding=1,
                               bias=False)
        self.norm3 = group_norm(mid_channels)
        self.relu3 = nn.ReLU()
        self.conv3 = nn.Conv2d(mid_channels, out_channels, 1, bias=False)
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels,
                                      out_channels,
                                      1,
                                      stride=stride,
                                      bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x if self.shortcut is None else self.shortcut(x)
        out = self.conv1(self.relu1(self.norm1(x)))
        out = self.conv2(self.relu2(self.norm2(out)))
        out = self.conv3(self.relu3(self.norm3(out)))
        return residual + out


class ResNet(nn.Module):

    def __init__(self, config: ResNetConfig):
        super().__init__()
        width = config.width
        self.conv_stem = nn.Conv2d(config.in_channels,
                                   width,
                                   7,
                                   stride=2,
                                   padding=3,
                                   bias=False)
        self.pool_stem = nn.MaxPool2d(3, stride=2, padding=1)

        stages = []
        channels = width
        for index, blocks in enumerate(STAGE_BLOCKS[config.variant]):
            mid = width * 2**index
            stride = 1 if index == 0 else 2
            layer = []
            for block in range(blocks):
                layer.append(Bottleneck(channels, mid, stride if block == 0 else 1))
                channels = mid * EXPANSION
            stages.append(nn.Sequential(*layer))
        self.layer1, self.layer2, self.layer3, self.layer4 = stages
        self.norm_final = group_norm(channels)
        self.relu_final = nn.ReLU()
        self.fc = nn.Linear(channels, config.num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool_stem(self.conv_stem(x))
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return self.relu_final(self.norm_final(x))

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        pooled = features.mean(dim=(-2, -1))
        return self.fc(pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.features(x))


def branch_conv_names(names) -> list[str]:
    """Weight names counted as convolutional/dense layers (shortcuts excluded)."""
    counted = []
    for name in names:
        if not name.endswith(".weight"):
            continue
        leaf = name.rsplit(".", 2)[-2]
        if leaf.startswith("conv") or leaf == "fc":
            counted.append(name)
    return counted
