from __future__ import annotations

import torch
import torch.nn as nn

from .configs import DenseConfig


class DenseClassifier(nn.Module):
    """A single affine layer; the convex reference model for gradient checks."""

    def __init__(self, config: DenseConfig):
        super().__init__()
        self.fc = nn.Linear(config.input_dim, config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(x)
