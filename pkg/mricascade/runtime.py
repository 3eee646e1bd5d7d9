from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Optional

import torch

from .config import settings

logger = logging.getLogger(__name__)


@dataclass
class DeviceInfo:
    name: str
    device: torch.device
    deterministic: bool
    vram_bytes: Optional[int] = None


@functools.lru_cache(maxsize=4)
def get_device(preferred: Optional[str] = None) -> DeviceInfo:
    """Select the torch device.

    Order of preference:
    1) Explicit argument, else MRICASCADE_DEVICE (e.g. "cuda:1", "cpu").
    2) CPU fallback when the request cannot be honoured.

    Only CPU runs are promised to be bit-reproducible.
    """

    preferred = preferred or settings.device
    try:
        dev = torch.device(preferred)
    except (RuntimeError, TypeError) as exc:
        logger.warning("MRICASCADE_DEVICE=%s is invalid; falling back: %s",
                       preferred, exc)
        dev = torch.device("cpu")

    if dev.type == "cuda":
        if torch.cuda.is_available():
            idx = dev.index if dev.index is not None else torch.cuda.current_device()
            props = torch.cuda.get_device_properties(idx)
            logger.info("Selecting CUDA device cuda:%s (%s, %.2f GB)", idx,
                        props.name,
                        getattr(props, "total_memory", 0) / 1e9)
            return DeviceInfo(name=f"cuda:{idx} {props.name}",
                              device=torch.device(f"cuda:{idx}"),
                              deterministic=False,
                              vram_bytes=getattr(props, "total_memory", None))
        logger.warning("CUDA requested but not available; using CPU")

    return DeviceInfo(name="cpu",
                      device=torch.device("cpu"),
                      deterministic=True)


def configure_determinism(threads: Optional[int] = None) -> None:
    """Pin torch to deterministic kernels and a fixed intra-op thread count."""
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.set_num_threads(threads or settings.torch_threads)
