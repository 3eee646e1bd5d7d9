"""Four-panel overlay images: input, preprocessed, ground truth, prediction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .regions import PipelineError, binarize

TINT_RGB = (255, 0, 0)
TINT_OPACITY = 0.5


@dataclass(frozen=True)
class OverlayImage:
    image: np.ndarray  # (H, 4W, 3) uint8, RGB
    tinted: np.ndarray  # (H, W) uint8, the pixels tinted in the last panel

    @property
    def panels(self) -> list[np.ndarray]:
        width = self.image.shape[1] // 4
        return [self.image[:, i * width:(i + 1) * width] for i in range(4)]


def _to_gray(pixels: np.ndarray, size: int) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    lo, hi = float(pixels.min()), float(pixels.max())
    scaled = np.zeros_like(pixels) if hi <= lo else (pixels - lo) / (hi - lo)
    gray = np.round(scaled * 255.0).astype(np.uint8)
    if gray.shape != (size, size):
        gray = cv2.resize(gray, (size, size), interpolation=cv2.INTER_AREA)
    return cv2.cvtColor(gray, cv2.COLOR_GRAY2RGB)


def tint(gray_rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Blend the tint colour into the masked pixels at 50% opacity.

    Gray pixels keep R == G; every tinted pixel ends with R - G >= 127.
    """
    colour = np.empty_like(gray_rgb)
    colour[:] = TINT_RGB
    blended = cv2.addWeighted(gray_rgb, 1.0 - TINT_OPACITY, colour,
                              TINT_OPACITY, 0.0)
    out = gray_rgb.copy()
    selected = mask.astype(bool)
    out[selected] = blended[selected]
    return out


def tinted_pixels(panel: np.ndarray) -> np.ndarray:
    """Recover the tinted set of a prediction panel."""
    return (panel[..., 0] != panel[..., 1]).astype(np.uint8)


def render_overlay(original: np.ndarray,
                   preprocessed: np.ndarray,
                   gt_mask: Optional[np.ndarray],
                   prob_map: np.ndarray,
                   threshold: float = 0.5) -> OverlayImage:
    size = preprocessed.shape[-1]
    if preprocessed.shape != (size, size) or prob_map.shape != (size, size):
        raise PipelineError(
            f"preprocessed slice {preprocessed.shape} and prediction "
            f"{prob_map.shape} must share a square grid")
    predicted = binarize(prob_map, threshold)
    base = _to_gray(preprocessed, size)
    truth = np.zeros((size, size), np.uint8) if gt_mask is None else gt_mask
    if truth.shape != (size, size):
        truth = cv2.resize(truth.astype(np.uint8), (size, size),
                           interpolation=cv2.INTER_NEAREST)
    truth_panel = cv2.cvtColor((truth > 0).astype(np.uint8) * 255,
                               cv2.COLOR_GRAY2RGB)
    image = np.concatenate([
        _to_gray(original, size), base, truth_panel,
        tint(base, predicted)
    ],
                           axis=1)
    return OverlayImage(image=image, tinted=predicted)


def write_overlay(overlay: OverlayImage, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(overlay.image,
                                               cv2.COLOR_RGB2BGR)):
        raise PipelineError(f"failed to write overlay {path}")
    return path
