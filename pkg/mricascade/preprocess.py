"""Normalisation, resizing and the augmentation suite."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .dataio import MaskSlice, PatientRecord, SliceImage

logger = logging.getLogger(__name__)

Pair = tuple[SliceImage, Optional[MaskSlice]]


class PreprocessError(ValueError):
    pass


class PreprocessConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    target_size: int = Field(default=256, ge=16)
    normalize_mode: Literal["zscore"] = "zscore"


class ElasticDeformParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    grid_shape: tuple[int, int] = (3, 3)
    sigma: float = Field(default=10.0, ge=0.0, allow_inf_nan=False)

    @field_validator("grid_shape")
    @classmethod
    def _grid_at_least_two(cls, value: tuple[int, int]) -> tuple[int, int]:
        if min(value) < 2:
            raise ValueError("grid dimensions must be >= 2")
        return value


class AugmentationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # uniform angle range [min, max]; empty disables rotation
    rotations: tuple[float, ...] = (-15.0, 15.0)
    flip_horizontal: bool = True
    flip_vertical: bool = False
    flip_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    max_translation: int = Field(default=10, ge=0)
    noise_sigma: float = Field(default=0.01, ge=0.0)
    elastic: Optional[ElasticDeformParams] = ElasticDeformParams()
    copies_per_sample: int = Field(default=1, ge=0)
    materialize: bool = False

    @field_validator("rotations")
    @classmethod
    def _finite_angles(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(a) for a in value):
            raise ValueError("rotation angles must be finite")
        return value


@dataclass(frozen=True)
class DisplacementField:
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise PreprocessError("dx and dy must be 2-D with equal shapes")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise PreprocessError("displacements must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


def normalize(image: SliceImage) -> SliceImage:
    """Per-slice z-score; constant slices map to zeros."""
    if image.size == 0:
        raise PreprocessError("cannot normalize an empty image")
    if not np.isfinite(image).all():
        raise PreprocessError("image contains non-finite pixels")
    pixels = image.astype(np.float64)
    std = pixels.std()
    if std <= 1e-8:
        return np.zeros_like(pixels)
    return (pixels - pixels.mean()) / std


def _bicubic(planes: np.ndarray, height: int, width: int,
             align_corners: bool) -> np.ndarray:
    # torch keeps the cubic weights in float64, so constants stay constant
    tensor = torch.from_numpy(np.ascontiguousarray(planes, dtype=np.float64))
    out = F.interpolate(tensor[None],
                        size=(height, width),
                        mode="bicubic",
                        align_corners=align_corners)
    return out[0].numpy()


def resize(image: SliceImage, size: int) -> SliceImage:
    if size < 2:
        raise PreprocessError(f"resize target must be >= 2, got {size}")
    if image.size == 0:
        raise PreprocessError("cannot resize an empty image")
    if image.shape == (size, size):
        return image.astype(np.float64, copy=True)
    return _bicubic(image[None], size, size, align_corners=False)[0]


def resize_mask(mask: MaskSlice, size: int) -> MaskSlice:
    if mask.shape == (size, size):
        return mask.copy()
    return cv2.resize(mask.astype(np.uint8), (size, size),
                      interpolation=cv2.INTER_NEAREST)


def preprocess_patient(record: PatientRecord,
                       cfg: PreprocessConfig) -> PatientRecord:
    """Resize to the target grid, then z-score each slice."""
    slices = tuple(normalize(resize(s, cfg.target_size)) for s in record.slices)
    masks = None
    if record.masks is not None:
        masks = tuple(resize_mask(m, cfg.target_size) for m in record.masks)
    return PatientRecord(patient_id=record.patient_id,
                         slices=slices,
                         masks=masks,
                         label=record.label)


def coarse_displacements(params: ElasticDeformParams, seed: int) -> np.ndarray:
    """Raw coarse draws, shape (2, grid_rows, grid_cols), N(0, sigma^2)."""
    rng = np.random.default_rng(seed)
    rows, cols = params.grid_shape
    return rng.normal(0.0, params.sigma, size=(2, rows, cols))


def sample_displacement_field(params: ElasticDeformParams, height: int,
                              width: int, seed: int) -> DisplacementField:
    rows, cols = params.grid_shape
    if height < rows or width < cols:
        raise PreprocessError(
            f"image {height}x{width} smaller than grid {rows}x{cols}")
    coarse = coarse_displacements(params, seed)
    if params.sigma == 0.0:
        zeros = np.zeros((height, width))
        return DisplacementField(dx=zeros, dy=zeros.copy())
    dense = _bicubic(coarse, height, width, align_corners=True)
    return DisplacementField(dx=dense[0], dy=dense[1])


def _remap(image: SliceImage, mask: Optional[MaskSlice], map_x: np.ndarray,
           map_y: np.ndarray) -> Pair:
    # cubic remap runs on float32 pixels
    warped = cv2.remap(image.astype(np.float32),
                       map_x.astype(np.float32),
                       map_y.astype(np.float32),
                       interpolation=cv2.INTER_CUBIC,
                       borderMode=cv2.BORDER_REFLECT_101)
    warped_mask = None
    if mask is not None:
        warped_mask = cv2.remap(mask.astype(np.uint8),
                                map_x.astype(np.float32),
                                map_y.astype(np.float32),
                                interpolation=cv2.INTER_NEAREST,
                                borderMode=cv2.BORDER_REFLECT_101)
    return warped.astype(np.float64), warped_mask


def elastic_deform(
        image: SliceImage, mask: Optional[MaskSlice],
        field: DisplacementField) -> tuple[SliceImage, Optional[MaskSlice]]:
    """Backward warp: out(r, c) = in(r + dy, c + dx), mirrored at borders."""
    if field.shape != image.shape:
        raise PreprocessError(
            f"field shape {field.shape} != image shape {image.shape}")
    if mask is not None and mask.shape != image.shape:
        raise PreprocessError(
            f"mask shape {mask.shape} != image shape {image.shape}")
    if not (field.dx.any() or field.dy.any()):
        return image.copy(), None if mask is None else mask.copy()

    rows, cols = np.indices(image.shape, dtype=np.float64)
    return _remap(image, mask, cols + field.dx, rows + field.dy)


def _mirror(index: np.ndarray, size: int) -> np.ndarray:
    """Reflect-101 border indices, matching cv2.BORDER_REFLECT_101."""
    if size == 1:
        return np.zeros_like(index)
    period = 2 * (size - 1)
    index = np.abs(index) % period
    return np.where(index >= size, period - index, index)


@dataclass(frozen=True)
class _Geometry:
    angle: float
    shift: tuple[int, int]
    flip_horizontal: bool
    flip_vertical: bool
    field: Optional[DisplacementField]

    @property
    def identity(self) -> bool:
        return (self.angle == 0.0 and self.shift == (0, 0)
                and not self.flip_horizontal and not self.flip_vertical
                and self.field is None)

    @property
    def integral(self) -> bool:
        return self.angle == 0.0 and self.field is None

    def sampling_map(self, height: int,
                     width: int) -> tuple[np.ndarray, np.ndarray]:
        """Source coordinates for every output pixel.

        Composes rotation and translation, then flips, then the elastic
        field, so image and mask are resampled exactly once.
        """
        rows, cols = np.indices((height, width), dtype=np.float64)
        x, y = cols, rows
        if self.field is not None:
            x, y = x + self.field.dx, y + self.field.dy
        if self.flip_horizontal:
            x = (width - 1) - x
        if self.flip_vertical:
            y = (height - 1) - y
        forward = cv2.getRotationMatrix2D(
            ((width - 1) / 2.0, (height - 1) / 2.0), self.angle, 1.0)
        forward[0, 2] += self.shift[1]
        forward[1, 2] += self.shift[0]
        inverse = cv2.invertAffineTransform(forward)
        src_x = inverse[0, 0] * x + inverse[0, 1] * y + inverse[0, 2]
        src_y = inverse[1, 0] * x + inverse[1, 1] * y + inverse[1, 2]
        return src_x, src_y

    def apply(self, image: SliceImage, mask: Optional[MaskSlice]) -> Pair:
        if self.identity:
            return (image.astype(np.float64, copy=True),
                    None if mask is None else mask.astype(np.uint8, copy=True))
        height, width = image.shape
        if self.integral:
            # flips and whole-pixel shifts only: a pure index permutation
            src_x, src_y = self.sampling_map(height, width)
            cols = _mirror(np.rint(src_x).astype(np.int64), width)
            rows = _mirror(np.rint(src_y).astype(np.int64), height)
            out = image.astype(np.float64)[rows, cols]
            out_mask = None if mask is None else mask.astype(np.uint8)[rows,
                                                                        cols]
            return out, out_mask
        return _remap(image, mask, *self.sampling_map(height, width))


def _augment_once(image: SliceImage, mask: Optional[MaskSlice],
                  cfg: AugmentationConfig,
                  rng: np.random.Generator) -> Pair:
    # Every draw happens unconditionally so the stream layout is fixed.
    angle_u = rng.random()
    flip_draws = rng.random(2)
    shift = rng.integers(-cfg.max_translation, cfg.max_translation + 1, size=2)
    field_seed = int(rng.integers(0, 2**31 - 1))

    angle = 0.0
    if cfg.rotations:
        lo, hi = min(cfg.rotations), max(cfg.rotations)
        angle = lo + (hi - lo) * angle_u
    field = None
    if cfg.elastic is not None and cfg.elastic.sigma > 0.0:
        field = sample_displacement_field(cfg.elastic, *image.shape, field_seed)
    geometry = _Geometry(
        angle=angle,
        shift=(int(shift[0]), int(shift[1])),
        flip_horizontal=bool(cfg.flip_horizontal
                             and flip_draws[0] < cfg.flip_probability),
        flip_vertical=bool(cfg.flip_vertical
                           and flip_draws[1] < cfg.flip_probability),
        field=field)
    out, out_mask = geometry.apply(image, mask)

    if cfg.noise_sigma > 0.0:
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape)
    return out, out_mask


def augment(image: SliceImage, mask: Optional[MaskSlice],
            cfg: AugmentationConfig, seed: int) -> list[Pair]:
    """``copies_per_sample`` independently augmented copies.

    Copy ``k`` draws from the stream (seed, k); geometry is shared between
    image and mask, noise touches the image only.
    """
    pairs = []
    for k in range(cfg.copies_per_sample):
        rng = np.random.default_rng([seed, k])
        pairs.append(_augment_once(image, mask, cfg, rng))
    return pairs


def materialize_augmentations(pairs: Sequence[Pair], out_dir: Path | str,
                              prefix: str = "aug") -> list[Path]:
    """Write augmented pairs as PNG for inspection."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (pixels, mask) in enumerate(pairs):
        lo, hi = float(pixels.min()), float(pixels.max())
        scaled = np.zeros_like(pixels) if hi <= lo else (pixels - lo) / (hi - lo)
        path = out_dir / f"{prefix}_{k:03d}.png"
        cv2.imwrite(str(path), np.round(scaled * 255).astype(np.uint8))
        written.append(path)
        if mask is not None:
            mask_path = out_dir / f"{prefix}_{k:03d}_mask.png"
            cv2.imwrite(str(mask_path), (mask * 255).astype(np.uint8))
            written.append(mask_path)
    logger.info("Materialized %d augmented pairs in %s", len(pairs), out_dir)
    return written
