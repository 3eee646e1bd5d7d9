from __future__ import annotations

from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, Field

from ..nets import NetError, ParameterStore
from .losses import TrainError


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # plain SGD only: no momentum, no weight decay
    kind: Literal["sgd"] = "sgd"
    learning_rate: float = Field(default=0.0003, gt=0.0, allow_inf_nan=False)


def sgd_step(params: ParameterStore, grads: ParameterStore,
             cfg: OptimizerConfig) -> ParameterStore:
    """theta <- theta - learning_rate * g for every tensor."""
    try:
        params.check_aligned(grads)
    except NetError as exc:
        raise TrainError(f"gradient store misaligned: {exc}") from exc
    lr = cfg.learning_rate
    with torch.no_grad():
        return params.map(
            lambda name, theta: theta - lr * grads[name].to(theta))


def accumulate(total: ParameterStore | None,
               grads: ParameterStore) -> ParameterStore:
    if total is None:
        return grads
    return total.map(lambda name, g: g + grads[name])


def scale(grads: ParameterStore, factor: float) -> ParameterStore:
    return grads.map(lambda _, g: g * factor)
