"""Segmentation and classification losses with their output gradients."""
from __future__ import annotations

from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F

PROB_CLAMP = 1e-7

SegLossKind = Literal["bce", "bce_plus_softdice"]


class TrainError(RuntimeError):
    pass


def seg_loss_value(probs: torch.Tensor, mask: torch.Tensor,
                   kind: SegLossKind = "bce") -> torch.Tensor:
    """Differentiable segmentation loss over a (..., H, W) batch.

    bce is the pixel mean; the soft-dice term is averaged over the maps.
    """
    if probs.shape != mask.shape:
        raise TrainError(f"probability shape {tuple(probs.shape)} != "
                         f"mask shape {tuple(mask.shape)}")
    mask = mask.to(probs.dtype)
    clamped = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(mask * torch.log(clamped) +
             (1.0 - mask) * torch.log1p(-clamped)).mean()
    if kind == "bce_plus_softdice":
        dims = (-2, -1)
        overlap = (probs * mask).sum(dim=dims)
        total = probs.sum(dim=dims) + mask.sum(dim=dims)
        loss = loss + (1.0 - (2.0 * overlap + 1.0) / (total + 1.0)).mean()
    elif kind != "bce":
        raise TrainError(f"unknown segmentation loss {kind!r}")
    return loss


def cls_loss_value(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over a (B, K) batch."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    num_classes = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise TrainError(
            f"labels must lie in [0, {num_classes}), got {labels.tolist()}")
    return F.cross_entropy(logits, labels)


def _with_output_grad(fn, output: torch.Tensor) -> tuple[float, torch.Tensor]:
    leaf = output.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        loss = fn(leaf)
        (grad, ) = torch.autograd.grad(loss, leaf)
    return float(loss.detach()), grad


def seg_loss_grad(probs: torch.Tensor, mask: torch.Tensor,
                  kind: SegLossKind = "bce") -> tuple[float, torch.Tensor]:
    return _with_output_grad(lambda p: seg_loss_value(p, mask, kind), probs)


def cls_loss_grad(logits: torch.Tensor,
                  labels: torch.Tensor) -> tuple[float, torch.Tensor]:
    return _with_output_grad(lambda z: cls_loss_value(z, labels), logits)


def seg_loss(prob_map, mask, kind: SegLossKind = "bce") -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to a single probability map."""
    probs = torch.as_tensor(np.asarray(prob_map, dtype=np.float64))
    target = torch.as_tensor(np.asarray(mask, dtype=np.float64))
    loss, grad = seg_loss_grad(probs, target, kind)
    return loss, grad.numpy()


def cls_loss(logits, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one logits vector; gradient is softmax - one_hot."""
    z = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    if z.ndim != 1:
        raise TrainError(f"expected a logits vector, got shape {tuple(z.shape)}")
    loss, grad = cls_loss_grad(z[None], torch.tensor([label]))
    return loss, grad[0].numpy()
