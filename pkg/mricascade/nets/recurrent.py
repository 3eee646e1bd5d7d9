from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .configs import RecurrentConfig

State = tuple[torch.Tensor, ...]


class RoiEncoder(nn.Module):
    """Strided 3x3 convolutions, global average pool, linear projection."""

    def __init__(self, config: RecurrentConfig, in_channels: int = 1):
        super().__init__()
        layers = []
        channels = in_channels
        for width, stride in zip(config.encoder_channels, config.encoder_strides):
            layers += [nn.Conv2d(channels, width, 3, stride=stride, padding=1),
                       nn.ReLU()]
            channels = width
        self.convs = nn.Sequential(*layers)
        self.proj = nn.Linear(channels, config.input_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.convs(x).mean(dim=(-2, -1)))


class PlainCell(nn.Module):
    """h <- tanh(W x + U h + b)."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.W = nn.Parameter(torch.empty(hidden_dim, input_dim))
        self.U = nn.Parameter(torch.empty(hidden_dim, hidden_dim))
        self.b = nn.Parameter(torch.zeros(hidden_dim))

    def initial_state(self, batch: int, like: torch.Tensor) -> State:
        return (like.new_zeros(batch, self.hidden_dim), )

    def forward(self, x: torch.Tensor, state: State) -> State:
        (h, ) = state
        return (torch.tanh(x @ self.W.T + h @ self.U.T + self.b), )


class GatedCell(nn.Module):
    """Input/forget/output gates with a tanh candidate; state is (h, c)."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        for gate in self.GATES:
            setattr(self, f"W_{gate}",
                    nn.Parameter(torch.empty(hidden_dim, input_dim)))
            setattr(self, f"U_{gate}",
                    nn.Parameter(torch.empty(hidden_dim, hidden_dim)))
            setattr(self, f"b_{gate}", nn.Parameter(torch.zeros(hidden_dim)))

    def initial_state(self, batch: int, like: torch.Tensor) -> State:
        zeros = like.new_zeros(batch, self.hidden_dim)
        return zeros, zeros.clone()

    def _pre(self, gate: str, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return (x @ getattr(self, f"W_{gate}").T + h @ getattr(self, f"U_{gate}").T
                + getattr(self, f"b_{gate}"))

    def forward(self, x: torch.Tensor, state: State) -> State:
        h, c = state
        i = torch.sigmoid(self._pre("i", x, h))
        f = torch.sigmoid(self._pre("f", x, h))
        g = torch.tanh(self._pre("g", x, h))
        o = torch.sigmoid(self._pre("o", x, h))
        c = f * c + i * g
        return o * torch.tanh(c), c


class RecurrentClassifier(nn.Module):
    """Embeds every ROI slice, threads the cell state, classifies the last h.

    Input shape is (batch, steps, channels, height, width).
    """

    def __init__(self, config: RecurrentConfig, in_channels: int = 1):
        super().__init__()
        self.encoder = RoiEncoder(config, in_channels)
        cell_type = GatedCell if config.cell == "gated" else PlainCell
        self.cell = cell_type(config.input_dim, config.hidden_dim)
        self.fc = nn.Linear(config.hidden_dim, config.num_classes)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        batch, steps = x.shape[:2]
        flat = self.encoder(x.reshape(batch * steps, *x.shape[2:]))
        return flat.reshape(batch, steps, -1)

    def run_cell(self,
                 embeddings: torch.Tensor,
                 state: Optional[State] = None) -> list[State]:
        if state is None:
            state = self.cell.initial_state(embeddings.shape[0], embeddings)
        states = []
        for t in range(embeddings.shape[1]):
            state = self.cell(embeddings[:, t], state)
            states.append(state)
        return states

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        states = self.run_cell(self.embed(x))
        return self.fc(states[-1][0])
