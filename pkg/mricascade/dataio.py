"""Dataset manifests, patient loading, splitting and the synthetic generator.

On disk a dataset is ``<root>/manifest.json`` plus 16-bit grayscale PNG slices
and 8-bit PNG masks with values {0, 255}.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence

import cv2
import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import settings

logger = logging.getLogger(__name__)

SliceImage = NDArray[np.float64]
MaskSlice = NDArray[np.uint8]

MANIFEST_NAME = "manifest.json"
MIN_SLICE_SIDE = 8


class DatasetError(RuntimeError):

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{message} [{key}]")
        self.key = key


def check_slice(pixels: np.ndarray) -> SliceImage:
    if pixels.ndim != 2:
        raise DatasetError(f"slice must be 2-D, got shape {pixels.shape}")
    if min(pixels.shape) < MIN_SLICE_SIDE:
        raise DatasetError(
            f"slice sides must be >= {MIN_SLICE_SIDE}, got {pixels.shape}")
    if not np.isfinite(pixels).all():
        raise DatasetError("slice contains non-finite intensities")
    return pixels


def check_mask(mask: np.ndarray, shape: tuple[int, ...]) -> MaskSlice:
    if mask.shape != shape:
        raise DatasetError(
            f"mask shape {mask.shape} does not match slice shape {shape}")
    if not np.isin(mask, (0, 1)).all():
        raise DatasetError("mask must be binary {0, 1}")
    return mask


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    slices: tuple[SliceImage, ...]
    masks: Optional[tuple[MaskSlice, ...]]
    label: int

    def __post_init__(self):
        if not self.slices:
            raise DatasetError("patient has no slices", key=self.patient_id)
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label}",
                               key=self.patient_id)
        for pixels in self.slices:
            check_slice(pixels)
        if self.masks is not None:
            if len(self.masks) != len(self.slices):
                raise DatasetError(
                    f"{len(self.slices)} slices but {len(self.masks)} masks",
                    key=self.patient_id)
            for pixels, mask in zip(self.slices, self.masks):
                check_mask(mask, pixels.shape)

    @property
    def has_lesion(self) -> bool:
        return self.masks is not None and any(m.any() for m in self.masks)


class PatientEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    label: Literal[0, 1]
    slices: tuple[str, ...] = Field(min_length=1)
    masks: Optional[tuple[str, ...]] = None


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    root_path: Path
    source_tag: str = "clinical"
    patients: tuple[PatientEntry, ...] = ()

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.patients]

    def entry(self, patient_id: str) -> PatientEntry:
        for patient in self.patients:
            if patient.id == patient_id:
                return patient
        raise DatasetError("unknown patient id", key=patient_id)

    def subset(self, ids: Iterable[str]) -> "DatasetManifest":
        keep = set(ids)
        return self.model_copy(update={
            "patients": tuple(p for p in self.patients if p.id in keep)
        })

    def to_json(self) -> str:
        payload = {
            "source_tag": self.source_tag,
            "patients": [p.model_dump(mode="json") for p in self.patients],
        }
        return json.dumps(payload, indent=2)


class SplitConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    train_fraction: float = Field(default=0.9, gt=0.0, le=1.0)
    seed: int = 0


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_patients: int = Field(default=200, gt=0)
    slices_per_patient: int = Field(default=4, gt=0)
    image_size: int = Field(default=64, ge=16)
    lesion_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    texture_contrast: float = Field(default=0.35, gt=0.0)
    seed: int = 0


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError("manifest not found", key=str(path))
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest JSON: {exc.msg}",
                           key=f"{path.name}:{exc.lineno}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("patients"), list):
        raise DatasetError("manifest must hold a 'patients' list",
                           key="patients")

    seen: set[str] = set()
    for item in raw["patients"]:
        pid = item.get("id") if isinstance(item, dict) else None
        if pid in seen:
            raise DatasetError("duplicate patient id", key=str(pid))
        if pid is not None:
            seen.add(pid)

    root = path.parent
    try:
        manifest = DatasetManifest(root_path=root,
                                   source_tag=raw.get("source_tag", "clinical"),
                                   patients=tuple(raw["patients"]))
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise DatasetError(f"invalid manifest: {first['msg']}",
                           key=key) from exc

    for patient in manifest.patients:
        for rel in (*patient.slices, *(patient.masks or ())):
            if not (root / rel).is_file():
                raise DatasetError("dangling file reference", key=rel)
    logger.info("Loaded manifest %s (%d patients, source=%s)", path,
                len(manifest.patients), manifest.source_tag)
    return manifest


def _read_png(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError("failed to decode image", key=str(path))
    if img.ndim != 2:
        raise DatasetError(f"expected single-channel PNG, got {img.shape}",
                           key=str(path))
    return img


def _decode_slice(raw: np.ndarray, path: Path) -> SliceImage:
    if raw.dtype == np.uint16:
        return raw.astype(np.float64) / 65535.0
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    raise DatasetError(f"unsupported slice dtype {raw.dtype}", key=str(path))


def load_patient(manifest: DatasetManifest, patient_id: str) -> PatientRecord:
    entry = manifest.entry(patient_id)
    root = manifest.root_path
    slices = tuple(
        check_slice(_decode_slice(_read_png(root / rel), root / rel))
        for rel in entry.slices)
    masks = None
    if entry.masks is not None:
        if len(entry.masks) != len(entry.slices):
            raise DatasetError(
                f"{len(entry.slices)} slices but {len(entry.masks)} masks",
                key=patient_id)
        decoded = []
        for rel, pixels in zip(entry.masks, slices):
            mask = (_read_png(root / rel) >= 128).astype(np.uint8)
            if mask.shape != pixels.shape:
                raise DatasetError(
                    f"mask shape {mask.shape} != slice shape {pixels.shape}",
                    key=rel)
            decoded.append(mask)
        masks = tuple(decoded)
    return PatientRecord(patient_id=entry.id,
                         slices=slices,
                         masks=masks,
                         label=entry.label)


def load_patients(manifest: DatasetManifest,
                  ids: Optional[Sequence[str]] = None,
                  workers: Optional[int] = None) -> list[PatientRecord]:
    """Load patients in manifest order; decoding runs on a thread pool."""
    ids = list(ids) if ids is not None else manifest.ids
    workers = workers or settings.workers
    if workers <= 1 or len(ids) <= 1:
        return [load_patient(manifest, pid) for pid in ids]
    with ThreadPoolExecutor(max_workers=workers,
                            thread_name_prefix="load") as pool:
        return list(pool.map(lambda pid: load_patient(manifest, pid), ids))


def split_dataset(
        manifest: DatasetManifest,
        cfg: SplitConfig) -> tuple[DatasetManifest, DatasetManifest]:
    """Split by patient; train size is round-half-up of fraction x N."""
    n = len(manifest.patients)
    if n == 0:
        raise DatasetError("cannot split an empty manifest")
    if cfg.train_fraction < 1.0 and n < 2:
        raise DatasetError("need at least 2 patients for a validation split")

    n_train = int(math.floor(cfg.train_fraction * n + 0.5))
    if cfg.train_fraction < 1.0:
        n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(cfg.seed).permutation(n)
    train_idx = set(order[:n_train].tolist())
    train_ids = [p.id for i, p in enumerate(manifest.patients) if i in train_idx]
    val_ids = [
        p.id for i, p in enumerate(manifest.patients) if i not in train_idx
    ]
    return manifest.subset(train_ids), manifest.subset(val_ids)


def _smoothed_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.normal(0.0, 1.0, size=(size, size))
    smooth = cv2.GaussianBlur(noise, (0, 0),
                              sigmaX=max(size / 16.0, 1.0),
                              borderType=cv2.BORDER_REFLECT_101)
    span = smooth.max() - smooth.min()
    if span <= 0:
        return np.full((size, size), 0.4)
    return 0.25 + 0.3 * (smooth - smooth.min()) / span


def _ellipse_mask(size: int, center: tuple[float, float],
                  axes: tuple[float, float], angle: float) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    dr, dc = rows - center[0], cols - center[1]
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    u = dc * cos_a + dr * sin_a
    v = -dc * sin_a + dr * cos_a
    return ((u / axes[0])**2 + (v / axes[1])**2 <= 1.0).astype(np.uint8)


def synthesize_patient(cfg: SyntheticConfig, index: int) -> PatientRecord:
    """One synthetic patient, drawn from the stream (seed, index).

    Intensities are quantised to the 16-bit grid used on disk, so writing and
    reloading reproduces these arrays exactly.
    """
    rng = np.random.default_rng([cfg.seed, index])
    size, depth = cfg.image_size, cfg.slices_per_patient
    positive = bool(rng.random() < cfg.lesion_probability)

    if positive:
        run = int(rng.integers(1, depth + 1))
        start = int(rng.integers(0, depth - run + 1))
        center = (rng.uniform(0.35, 0.65) * size,
                  rng.uniform(0.35, 0.65) * size)
        axes = (rng.uniform(0.08, 0.16) * size, rng.uniform(0.06, 0.12) * size)
        angle = float(rng.uniform(0.0, math.pi))
    slices, masks = [], []
    for z in range(depth):
        background = _smoothed_noise(rng, size)
        mask = np.zeros((size, size), dtype=np.uint8)
        if positive and start <= z < start + run:
            # ellipse tapers toward both ends of the run
            mid = start + (run - 1) / 2.0
            taper = 1.0 - 0.35 * abs(z - mid) / max(run / 2.0, 1.0)
            mask = _ellipse_mask(size, center,
                                 (max(axes[0] * taper, 2.0),
                                  max(axes[1] * taper, 2.0)), angle)
            falloff = cv2.GaussianBlur(mask.astype(np.float64), (0, 0),
                                       sigmaX=1.5)
            background = background + cfg.texture_contrast * mask * (
                0.6 + 0.4 * falloff)
        texture = 1.0 + 0.08 * rng.normal(0.0, 1.0, size=(size, size))
        pixels = np.clip(background * texture, 0.0, 1.0)
        quantised = np.round(pixels * 65535.0).astype(np.uint16)
        slices.append(quantised.astype(np.float64) / 65535.0)
        masks.append(mask)

    label = int(any(m.any() for m in masks))
    return PatientRecord(patient_id=f"P{index:04d}",
                         slices=tuple(slices),
                         masks=tuple(masks),
                         label=label)


def generate_synthetic(cfg: SyntheticConfig, root: Path | str) -> DatasetManifest:
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset root: {exc.strerror}",
                           key=str(root)) from exc

    entries = []
    positives = 0
    for index in range(cfg.n_patients):
        record = synthesize_patient(cfg, index)
        positives += record.label
        patient_dir = root / record.patient_id
        try:
            patient_dir.mkdir(exist_ok=True)
        except OSError as exc:
            raise DatasetError(f"cannot write dataset: {exc.strerror}",
                               key=str(patient_dir)) from exc
        slice_paths, mask_paths = [], []
        for z, (pixels, mask) in enumerate(zip(record.slices, record.masks)):
            slice_rel = f"{record.patient_id}/slice_{z:03d}.png"
            mask_rel = f"{record.patient_id}/mask_{z:03d}.png"
            encoded = np.round(pixels * 65535.0).astype(np.uint16)
            if not cv2.imwrite(str(root / slice_rel), encoded):
                raise DatasetError("failed to write slice", key=slice_rel)
            if not cv2.imwrite(str(root / mask_rel),
                               (mask * 255).astype(np.uint8)):
                raise DatasetError("failed to write mask", key=mask_rel)
            slice_paths.append(slice_rel)
            mask_paths.append(mask_rel)
        entries.append(
            PatientEntry(id=record.patient_id,
                         label=record.label,
                         slices=tuple(slice_paths),
                         masks=tuple(mask_paths)))

    manifest = DatasetManifest(root_path=root,
                               source_tag="synthetic",
                               patients=tuple(entries))
    try:
        (root / MANIFEST_NAME).write_text(manifest.to_json() + "\n",
                                          encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write manifest: {exc.strerror}",
                           key=str(root / MANIFEST_NAME)) from exc
    logger.info("Generated %d synthetic patients (%d positive) in %s",
                cfg.n_patients, positives, root)
    return manifest
