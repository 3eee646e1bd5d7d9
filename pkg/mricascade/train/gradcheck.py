"""Finite-difference verification of the analytic parameter gradients.

Central differences in float64 are compared against ``backward`` on a random
subsample of coordinates. ReLU and max-pool are piecewise linear: a coordinate
whose +/- epsilon evaluations land on different pieces has no usable central
difference and is skipped (and counted) instead of being reported as an error.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from ..nets import (DeepSegNetConfig, DenseConfig, ParameterStore,
                    RecurrentConfig, ResNetConfig, UNetConfig, backward,
                    build_model, forward_cached, init_params, is_segmenter)
from .losses import cls_loss_value, seg_loss_value

logger = logging.getLogger(__name__)

Objective = Callable[[torch.Tensor], torch.Tensor]

TOLERANCE = 1e-4
SMALL = 1e-6
SMALL_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_relative_error: float = 0.0
    checked: int = 0
    skipped_at_kinks: int = 0
    per_tensor: dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.checked > 0 and self.max_relative_error < tolerance

    def to_dict(self) -> dict:
        return {
            "max_relative_error": self.max_relative_error,
            "checked": self.checked,
            "skipped_at_kinks": self.skipped_at_kinks,
            "per_tensor": dict(self.per_tensor),
        }


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < SMALL:
        scale = SMALL_FLOOR
    return abs(analytic - numeric) / scale


@contextmanager
def _branch_recorder(model: nn.Module) -> Iterator[list]:
    """Records which piece every ReLU and max-pool is on during a forward."""
    trace: list = []

    def relu_hook(_module, inputs, _output):
        trace.append(inputs[0] > 0)

    def pool_hook(module, inputs, _output):
        _, indices = F.max_pool2d(inputs[0],
                                  module.kernel_size,
                                  module.stride,
                                  module.padding,
                                  return_indices=True)
        trace.append(indices)

    handles = []
    for module in model.modules():
        if isinstance(module, nn.ReLU):
            handles.append(module.register_forward_hook(relu_hook))
        elif isinstance(module, nn.MaxPool2d):
            handles.append(module.register_forward_hook(pool_hook))
    try:
        yield trace
    finally:
        for handle in handles:
            handle.remove()


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def default_objective(config, output: torch.Tensor,
                      seed: int = 0) -> Objective:
    """bce against a random mask for segmenters, cross-entropy otherwise."""
    rng = np.random.default_rng([seed, 1])
    if is_segmenter(config):
        target = torch.as_tensor(rng.integers(0, 2, size=tuple(output.shape)),
                                 dtype=output.dtype)
        return lambda out: seg_loss_value(out, target, "bce")
    labels = torch.as_tensor(rng.integers(0, output.shape[-1],
                                          size=output.shape[0]))
    return lambda out: cls_loss_value(out, labels)


def grad_check(config,
               inputs,
               epsilon: float = 1e-5,
               params: Optional[ParameterStore] = None,
               objective: Optional[Objective] = None,
               samples: int = 50,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar loss."""
    if params is None:
        params = init_params(config, seed)
    params = params.to(dtype=torch.float64)
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64))

    cache = forward_cached(params, x, config)
    if objective is None:
        objective = default_objective(config, cache.output, seed)
    with torch.enable_grad():
        loss = objective(cache.output)
        (grad_output, ) = torch.autograd.grad(loss, cache.output,
                                              retain_graph=True)
    analytic = backward(params, cache, grad_output)

    model = build_model(config)
    tensors = params.as_dict()
    rng = np.random.default_rng([seed, 2])
    report = GradCheckReport()

    def evaluate(update: dict[str, torch.Tensor]) -> tuple[float, list]:
        with _branch_recorder(model) as trace, torch.no_grad():
            out = functional_call(model, {**tensors, **update}, (x, ))
            return float(objective(out)), list(trace)

    _, base_trace = evaluate({})
    for name, tensor in tensors.items():
        flat = tensor.reshape(-1)
        count = min(samples, flat.numel())
        coords = rng.choice(flat.numel(), size=count, replace=False)
        worst = 0.0
        for coord in coords:
            plus, minus = flat.clone(), flat.clone()
            plus[coord] += epsilon
            minus[coord] -= epsilon
            loss_plus, trace_plus = evaluate({name: plus.reshape(tensor.shape)})
            loss_minus, trace_minus = evaluate(
                {name: minus.reshape(tensor.shape)})
            if not (_same_branches(trace_plus, base_trace)
                    and _same_branches(trace_minus, base_trace)):
                report.skipped_at_kinks += 1
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            exact = float(analytic[name].reshape(-1)[coord])
            worst = max(worst, relative_error(exact, numeric))
            report.checked += 1
        report.per_tensor[name] = worst
        report.max_relative_error = max(report.max_relative_error, worst)
    logger.info("grad_check %s: max_rel=%.3e checked=%d skipped=%d",
                getattr(config, "kind", type(config).__name__),
                report.max_relative_error, report.checked,
                report.skipped_at_kinks)
    return report


@dataclass(frozen=True)
class GradCheckCase:
    name: str
    config: object
    input_shape: tuple[int, ...]


def default_suite() -> list[GradCheckCase]:
    """Small models covering every block type and both loss families."""
    return [
        GradCheckCase("dense", DenseConfig(input_dim=8), (4, 8)),
        GradCheckCase(
            "unet_same",
            UNetConfig(depth=2, base_channels=4, padding_mode="same",
                       input_size=16), (1, 1, 16, 16)),
        GradCheckCase(
            "unet_valid",
            UNetConfig(depth=1, base_channels=4, padding_mode="valid",
                       input_size=20), (1, 1, 20, 20)),
        GradCheckCase("deepsegnet", DeepSegNetConfig(depth=2, base_channels=4),
                      (1, 1, 16, 16)),
        GradCheckCase(
            "resnet_mini",
            ResNetConfig(variant="resnet_mini", input_size=16, base_width=8),
            (2, 1, 16, 16)),
        GradCheckCase(
            "recurrent_plain",
            RecurrentConfig(cell="plain", input_dim=6, hidden_dim=5,
                            encoder_channels=(4, ), encoder_strides=(2, ),
                            roi_size=8), (1, 3, 1, 8, 8)),
        GradCheckCase(
            "recurrent_gated",
            RecurrentConfig(cell="gated", input_dim=6, hidden_dim=5,
                            encoder_channels=(4, ), encoder_strides=(2, ),
                            roi_size=8), (1, 3, 1, 8, 8)),
    ]


def run_suite(cases: Optional[list[GradCheckCase]] = None,
              epsilon: float = 1e-5,
              seed: int = 0,
              samples: int = 50) -> dict[str, GradCheckReport]:
    reports = {}
    for case in cases or default_suite():
        rng = np.random.default_rng([seed, 3])
        inputs = rng.normal(0.0, 1.0, size=case.input_shape)
        reports[case.name] = grad_check(case.config,
                                        inputs,
                                        epsilon=epsilon,
                                        seed=seed,
                                        samples=samples)
    return reports
