"""Pure forward/backward API over ParameterStores.

A model's ``nn.Module`` only supplies structure; weights always come from a
ParameterStore through ``torch.func.functional_call``. Modules are cached per
thread because the functional call swaps attributes on the module.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

from .configs import (DeepSegNetConfig, DenseConfig, NetError, RecurrentConfig,
                      ResNetConfig, UNetConfig, is_segmenter, valid_shape)
from .deepsegnet import DeepSegNet
from .dense import DenseClassifier
from .params import ParameterStore
from .recurrent import GatedCell, PlainCell, RecurrentClassifier
from .resnet import ResNet
from .unet import UNet

_local = threading.local()


class MissingCacheError(NetError):
    pass


def _construct(config) -> nn.Module:
    if isinstance(config, UNetConfig):
        if config.padding_mode == "valid" and valid_shape(config) is None:
            raise NetError(
                f"input size {config.input_size} is inadmissible for a "
                f"depth-{config.depth} valid U-Net")
        return UNet(config)
    if isinstance(config, DeepSegNetConfig):
        return DeepSegNet(config)
    if isinstance(config, ResNetConfig):
        return ResNet(config)
    if isinstance(config, RecurrentConfig):
        return RecurrentClassifier(config)
    if isinstance(config, DenseConfig):
        return DenseClassifier(config)
    raise NetError(f"unsupported network config {type(config).__name__}")


def build_model(config) -> nn.Module:
    cache = getattr(_local, "models", None)
    if cache is None:
        cache = _local.models = {}
    model = cache.get(config)
    if model is None:
        model = cache[config] = _construct(config).eval()
    return model


def _fan_in(module: nn.Module, tensor: torch.Tensor) -> int:
    if isinstance(module, nn.ConvTranspose2d):
        # stride == kernel, so every output pixel sees in_channels inputs
        return module.in_channels
    if isinstance(module, nn.Conv2d):
        return module.in_channels // module.groups * math.prod(module.kernel_size)
    if isinstance(module, nn.Linear):
        return module.in_features
    return tensor.shape[1]


def init_params(config, seed: int) -> ParameterStore:
    """Fan-in Gaussian weights, zero biases, unit norm scales, forget bias 1."""
    model = build_model(config)
    generator = torch.Generator().manual_seed(seed)
    entries = []
    for module_name, module in model.named_modules():
        for pname, param in module.named_parameters(recurse=False):
            name = f"{module_name}.{pname}" if module_name else pname
            if isinstance(module, nn.GroupNorm):
                value = (torch.ones_like(param) if pname == "weight" else
                         torch.zeros_like(param))
            elif isinstance(module, GatedCell) and pname == "b_f":
                value = torch.ones_like(param)
            elif pname == "bias" or (isinstance(module, (PlainCell, GatedCell))
                                     and pname.startswith("b")):
                value = torch.zeros_like(param)
            else:
                std = math.sqrt(2.0 / _fan_in(module, param))
                value = torch.randn(param.shape,
                                    generator=generator,
                                    dtype=torch.float32) * std
            entries.append((name, value.detach().to(torch.float32)))
    return ParameterStore(entries)


@dataclass
class ForwardCache:
    output: torch.Tensor
    leaves: dict[str, torch.Tensor]
    consumed: bool = False


def _check_input(config, x: torch.Tensor) -> None:
    side = x.shape[-1]
    if x.shape[-2] != side:
        raise NetError(f"expected square inputs, got {tuple(x.shape[-2:])}")
    if isinstance(config, UNetConfig):
        if side != config.input_size:
            raise NetError(
                f"input size {side} does not match config {config.input_size}")
        if config.padding_mode == "valid":
            if valid_shape(config) is None:
                raise NetError(f"input size {side} is inadmissible")
        elif side % 2**config.depth:
            raise NetError(
                f"input size {side} is not divisible by 2^{config.depth}")
    elif isinstance(config, DeepSegNetConfig):
        if side % 2**config.depth:
            raise NetError(
                f"input size {side} is not divisible by 2^{config.depth}")
    elif isinstance(config, ResNetConfig):
        if side != config.input_size:
            raise NetError(
                f"input size {side} does not match config {config.input_size}")
    elif isinstance(config, RecurrentConfig):
        if x.shape[1] == 0:
            raise NetError("recurrent input sequence is empty")
        if side != config.roi_size:
            raise NetError(
                f"ROI size {side} does not match config {config.roi_size}")


def _prepare(params: ParameterStore, inputs) -> torch.Tensor:
    x = torch.as_tensor(inputs)
    return x.to(device=params.device, dtype=params.dtype)


def run_forward(params: ParameterStore, inputs, config) -> torch.Tensor:
    """Batched forward pass without gradient tracking."""
    x = _prepare(params, inputs)
    if not isinstance(config, DenseConfig):
        _check_input(config, x)
    with torch.no_grad():
        return functional_call(build_model(config), params.as_dict(), (x, ))


def forward_cached(params: ParameterStore, inputs, config) -> ForwardCache:
    """Forward pass that keeps the graph needed by :func:`backward`."""
    x = _prepare(params, inputs)
    if not isinstance(config, DenseConfig):
        _check_input(config, x)
    leaves = {
        name: tensor.detach().clone().requires_grad_(True)
        for name, tensor in params.items()
    }
    with torch.enable_grad():
        output = functional_call(build_model(config), leaves, (x, ))
    return ForwardCache(output=output, leaves=leaves)


def backward(params: ParameterStore, cache: ForwardCache | None,
             grad_output) -> ParameterStore:
    """Parameter gradients for ``sum(output * grad_output)``."""
    if cache is None or cache.consumed:
        raise MissingCacheError("backward needs a fresh forward_cached result")
    if list(cache.leaves) != list(params):
        raise NetError("forward cache was built from a different store")
    grad_output = torch.as_tensor(grad_output).to(cache.output)
    if grad_output.shape != cache.output.shape:
        raise NetError(f"output gradient shape {tuple(grad_output.shape)} != "
                       f"output shape {tuple(cache.output.shape)}")
    names = list(cache.leaves)
    grads = torch.autograd.grad(cache.output, [cache.leaves[n] for n in names],
                                grad_outputs=grad_output,
                                allow_unused=True)
    cache.consumed = True
    return ParameterStore(
        (name, torch.zeros_like(params[name]) if g is None else g.detach())
        for name, g in zip(names, grads))


def _image_batch(image) -> np.ndarray:
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.ndim != 2:
        raise NetError(f"expected a 2-D slice, got shape {pixels.shape}")
    return pixels[None, None]


def unet_forward(params: ParameterStore, image, config: UNetConfig) -> np.ndarray:
    return run_forward(params, _image_batch(image), config)[0, 0].cpu().numpy()


def deepsegnet_forward(params: ParameterStore, image,
                       config: DeepSegNetConfig) -> np.ndarray:
    return run_forward(params, _image_batch(image), config)[0, 0].cpu().numpy()


def resnet_forward(params: ParameterStore, image,
                   config: ResNetConfig) -> np.ndarray:
    return run_forward(params, _image_batch(image), config)[0].cpu().numpy()


def recurrent_forward(params: ParameterStore, sequence: Sequence,
                      config: RecurrentConfig) -> np.ndarray:
    if len(sequence) == 0:
        raise NetError("recurrent input sequence is empty")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in sequence])
    return run_forward(params, stack[None, :, None], config)[0].cpu().numpy()


def segmenter_batch(images: np.ndarray, config) -> tuple[np.ndarray, tuple[int, int]]:
    """Mirror-pad a (B, H, W) batch for the model; returns (batch, crop offset).

    Same-mode models get the batch unchanged. Valid-mode U-Nets get the
    smallest admissible input whose output covers the slice.
    """
    images = np.asarray(images, dtype=np.float64)
    side = images.shape[-1]
    if not (isinstance(config, UNetConfig) and config.padding_mode == "valid"):
        return images[:, None], (0, 0)
    out = valid_shape(config)
    if out is None or out < side:
        raise NetError(f"config input {config.input_size} cannot cover slice {side}")
    margin = (config.input_size - out) // 2
    before = margin + (out - side) // 2
    after = config.input_size - side - before
    padded = np.pad(images, ((0, 0), (before, after), (before, after)),
                    mode="symmetric")
    return padded[:, None], ((out - side) // 2, (out - side) // 2)


def segment_forward_cached(params: ParameterStore, images: np.ndarray,
                           config) -> ForwardCache:
    """Cached segmenter pass whose output is cropped to the slice grid."""
    if not is_segmenter(config):
        raise NetError("segment_forward_cached needs a segmenter config")
    batch, (top, left) = segmenter_batch(images, config)
    cache = forward_cached(params, batch, config)
    side = images.shape[-1]
    cache.output = cache.output[..., top:top + side, left:left + side]
    return cache


def segment(params: ParameterStore, images: np.ndarray, config,
            chunk: int = 16) -> np.ndarray:
    """Probability maps (B, H, W) on the slice grid."""
    images = np.asarray(images, dtype=np.float64)
    side = images.shape[-1]
    maps = []
    for start in range(0, len(images), chunk):
        batch, (top, left) = segmenter_batch(images[start:start + chunk], config)
        out = run_forward(params, batch, config)
        maps.append(out[:, 0, top:top + side, left:left + side].cpu().numpy())
    if not maps:
        return np.zeros((0, side, side))
    return np.concatenate(maps).astype(np.float64)
