"""Segment-then-classify composition of the four pipeline kinds."""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..dataio import (DatasetManifest, PatientRecord, SplitConfig, load_patients,
                      split_dataset)
from ..metrics import (DiceSummary, MetricsReport, classification_metrics,
                       confusion, summarize_dice)
from ..nets import (DeepSegNetConfig, ParameterStore, RecurrentConfig,
                    ResNetConfig, UNetConfig, fit_segmenter_config, init_params,
                    segment)
from ..preprocess import (AugmentationConfig, PreprocessConfig,
                          preprocess_patient, resize)
from ..runtime import get_device
from ..train import (OptimizerConfig, TrainConfig, TrainReport, load_pretrained,
                     predict_patients, train_classifier, train_segmenter)
from .regions import CandidateRegion, PipelineError, binarize, extract_candidates

logger = logging.getLogger(__name__)


class PipelineKind(str, enum.Enum):
    deepsegnet_resnet50 = "deepsegnet_resnet50"
    deepsegnet_rnn = "deepsegnet_rnn"
    unet_rnn = "unet_rnn"
    unet_lstm = "unet_lstm"

    @property
    def segmenter(self) -> str:
        return "deepsegnet" if self.value.startswith("deepsegnet") else "unet"

    @property
    def classifier(self) -> str:
        return {"deepsegnet_resnet50": "resnet", "unet_lstm": "gated"}.get(
            self.value, "plain")


class RoiConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    top_k: int = Field(default=1, ge=1)
    margin: int = Field(default=4, ge=0)
    roi_size: int = Field(default=32, ge=4)
    # None means half of the slice side
    fallback_size: Optional[int] = Field(default=None, ge=1)


class PretrainedConfig(BaseModel):
    """Archives that seed the two stages instead of a fresh init."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    segmenter: Optional[Path] = None
    classifier: Optional[Path] = None
    # False loads the same-named, same-shaped tensors and keeps the rest
    strict: bool = False


class PipelineConfigs(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    split: SplitConfig = SplitConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    augmentation: Optional[AugmentationConfig] = AugmentationConfig()
    unet: UNetConfig = UNetConfig()
    deepsegnet: DeepSegNetConfig = DeepSegNetConfig()
    resnet: ResNetConfig = ResNetConfig()
    recurrent: RecurrentConfig = RecurrentConfig()
    train_segmenter: TrainConfig = TrainConfig()
    train_classifier: TrainConfig = TrainConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    roi: RoiConfig = RoiConfig()
    pretrained: PretrainedConfig = PretrainedConfig()

    def segmenter_config(self, kind: PipelineKind):
        base = self.unet if kind.segmenter == "unet" else self.deepsegnet
        return fit_segmenter_config(base, self.preprocess.target_size)

    def classifier_config(self, kind: PipelineKind):
        size = self.roi.roi_size
        if kind.classifier == "resnet":
            return self.resnet.model_copy(update={"input_size": size})
        return self.recurrent.model_copy(update={
            "cell": kind.classifier,
            "roi_size": size
        })

    def with_train_fraction(self, fraction: float) -> "PipelineConfigs":
        return self.model_copy(
            update={"split": self.split.model_copy(
                update={"train_fraction": fraction})})


@dataclass(frozen=True)
class RoiSequence:
    patient_id: str
    rois: np.ndarray  # (slices, roi_size, roi_size)
    label: int
    fallback: tuple[bool, ...]
    regions: tuple[Optional[CandidateRegion], ...]


class PipelineResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PipelineKind
    metrics: MetricsReport
    train_fraction: float
    seed: int
    evaluated_ids: tuple[str, ...] = ()


@dataclass
class SegmenterStage:
    params: ParameterStore
    config: object
    report: Optional[TrainReport] = None


@dataclass
class PipelineRun:
    result: PipelineResult
    segmenter: SegmenterStage
    classifier_params: ParameterStore
    classifier_config: object
    classifier_report: TrainReport


def segment_slices(patient: PatientRecord, seg_params: ParameterStore,
                   seg_config) -> np.ndarray:
    """Probability maps (slices, H, W) on the patient's slice grid."""
    side = patient.slices[0].shape[-1]
    config = fit_segmenter_config(seg_config, side)
    return segment(seg_params, np.stack(patient.slices), config)


def _center_box(shape: tuple[int, int], size: int) -> tuple[int, int, int, int]:
    rows, cols = shape
    height, width = min(size, rows), min(size, cols)
    top, left = (rows - height) // 2, (cols - width) // 2
    return top, left, top + height - 1, left + width - 1


def rois_from_masks(patient: PatientRecord, masks: Sequence[np.ndarray],
                    roi: RoiConfig) -> RoiSequence:
    """Crop each slice around its largest candidate (center crop if none)."""
    if len(masks) != len(patient.slices):
        raise PipelineError(
            f"{patient.patient_id}: {len(masks)} masks for "
            f"{len(patient.slices)} slices")
    crops, fallback, regions = [], [], []
    for index, (pixels, mask) in enumerate(zip(patient.slices, masks)):
        candidates = extract_candidates(mask, index, roi.top_k, roi.margin)
        if candidates:
            boxes = np.array([c.bbox for c in candidates])
            top, left = boxes[:, :2].min(axis=0)
            bottom, right = boxes[:, 2:].max(axis=0)
            regions.append(candidates[0])
        else:
            size = roi.fallback_size or max(pixels.shape[-1] // 2, 1)
            top, left, bottom, right = _center_box(pixels.shape, size)
            regions.append(None)
        fallback.append(not candidates)
        crop = pixels[top:bottom + 1, left:right + 1]
        crops.append(resize(crop, roi.roi_size))
    return RoiSequence(patient_id=patient.patient_id,
                       rois=np.stack(crops),
                       label=patient.label,
                       fallback=tuple(fallback),
                       regions=tuple(regions))


def crop_roi_sequence(patient: PatientRecord, seg_params: ParameterStore,
                      seg_config, roi: RoiConfig = RoiConfig()) -> RoiSequence:
    probs = segment_slices(patient, seg_params, seg_config)
    masks = [binarize(p, roi.threshold) for p in probs]
    return rois_from_masks(patient, masks, roi)


def _check_annotated(records: Sequence[PatientRecord]) -> None:
    for record in records:
        if record.masks is None:
            raise PipelineError(
                f"patient {record.patient_id} has no masks; both stages "
                "need annotated data")


def segmentation_dice(patients: Sequence[PatientRecord],
                      seg_params: ParameterStore, seg_config,
                      threshold: float) -> DiceSummary:
    pairs = {}
    for patient in patients:
        probs = segment_slices(patient, seg_params, seg_config)
        pairs[patient.patient_id] = [
            (binarize(p, threshold), m) for p, m in zip(probs, patient.masks)
        ]
    return summarize_dice(pairs)


def initial_params(config, seed: int, path: Optional[Path],
                   strict: bool) -> Optional[ParameterStore]:
    """Fresh init overlaid with a pretrained archive, or None without one."""
    if path is None:
        return None
    loaded = load_pretrained(init_params(config, seed), path, strict)
    logger.info("Loaded %d of %d tensors for %s from %s", len(loaded.replaced),
                len(loaded.params), type(config).__name__, path)
    if loaded.skipped:
        logger.info("Not loaded from %s: %s", path, ", ".join(loaded.skipped))
    return loaded.params


def execute_pipeline(kind: PipelineKind | str,
                     dataset: DatasetManifest,
                     configs: PipelineConfigs,
                     seed: int,
                     segmenter: Optional[SegmenterStage] = None,
                     patients: Optional[Sequence[PatientRecord]] = None
                     ) -> PipelineRun:
    """Train both stages and evaluate on the validation patients.

    The run seed drives the split and both training loops. ``segmenter``
    skips segmenter training; ``patients`` skips loading (already
    preprocessed records in manifest order).
    """
    kind = PipelineKind(kind)
    start = time.perf_counter()
    split_cfg = configs.split.model_copy(update={"seed": seed})
    train_manifest, val_manifest = split_dataset(dataset, split_cfg)
    if not val_manifest.patients:
        raise PipelineError("validation split is empty; use train_fraction < 1")

    if patients is None:
        loaded = load_patients(dataset)
        patients = [preprocess_patient(p, configs.preprocess) for p in loaded]
    _check_annotated(patients)
    by_id = {p.patient_id: p for p in patients}
    train_set = [by_id[pid] for pid in train_manifest.ids]
    val_set = [by_id[pid] for pid in val_manifest.ids]
    logger.info("%s: %d train / %d validation patients", kind.value,
                len(train_set), len(val_set))

    if segmenter is None:
        seg_config = configs.segmenter_config(kind)
        seg_cfg = configs.train_segmenter.model_copy(update={"seed": seed})
        trained, seg_report = train_segmenter(
            seg_config, train_set, val_set, seg_cfg, configs.optimizer,
            configs.augmentation,
            initial_params(seg_config, seed, configs.pretrained.segmenter,
                           configs.pretrained.strict))
        segmenter = SegmenterStage(trained, seg_config, seg_report)

    device = get_device().device
    seg_params = segmenter.params.to(device=device)
    sequences = {
        p.patient_id: crop_roi_sequence(p, seg_params, segmenter.config,
                                        configs.roi)
        for p in patients
    }
    train_rois = [sequences[pid] for pid in train_manifest.ids]
    val_rois = [sequences[pid] for pid in val_manifest.ids]

    cls_config = configs.classifier_config(kind)
    cls_cfg = configs.train_classifier.model_copy(update={"seed": seed})
    cls_params, cls_report = train_classifier(
        cls_config, train_rois, val_rois, cls_cfg, configs.optimizer,
        initial_params(cls_config, seed, configs.pretrained.classifier,
                       configs.pretrained.strict))

    probs = predict_patients(cls_params.to(device=device), cls_config, val_rois)
    decisions = (probs >= 0.5).astype(int)
    labels = [s.label for s in val_rois]
    metrics = classification_metrics(confusion(decisions, labels))
    dice_summary = segmentation_dice(val_set, seg_params, segmenter.config,
                                     configs.roi.threshold)
    metrics = metrics.model_copy(update={
        "dice": dice_summary.patient_mean,
        "dice_detail": dice_summary
    })
    result = PipelineResult(kind=kind,
                            metrics=metrics,
                            train_fraction=configs.split.train_fraction,
                            seed=seed,
                            evaluated_ids=tuple(val_manifest.ids))
    logger.info("%s completed in %.2fs", kind.value, time.perf_counter() - start)
    return PipelineRun(result=result,
                       segmenter=segmenter,
                       classifier_params=cls_params,
                       classifier_config=cls_config,
                       classifier_report=cls_report)


def run_pipeline(kind: PipelineKind | str, dataset: DatasetManifest,
                 configs: PipelineConfigs, seed: int) -> PipelineResult:
    return execute_pipeline(kind, dataset, configs, seed).result
