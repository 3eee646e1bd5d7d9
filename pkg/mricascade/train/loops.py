"""Training loops for the segmentation and classification stages.

Both loops shuffle with the stream (seed, epoch), apply plain SGD updates in
that order, keep the weights of the best validation epoch and stop early after
``early_stop_patience`` epochs without improvement.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Protocol, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ..config import settings
from ..dataio import PatientRecord
from ..metrics import dice
from ..nets import (ParameterStore, RecurrentConfig, backward, forward_cached,
                    init_params, is_segmenter, run_forward, segment,
                    segment_forward_cached)
from ..preprocess import AugmentationConfig, augment
from ..runtime import get_device
from .losses import TrainError, cls_loss_grad, seg_loss_grad
from .optim import OptimizerConfig, accumulate, scale, sgd_step

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=8, ge=1)
    seed: int = 0
    seg_loss: Literal["bce", "bce_plus_softdice"] = "bce"
    early_stop_patience: int = Field(default=5, ge=0)  # 0 disables


class EpochRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    val_metric: Optional[float] = None


class TrainReport(BaseModel):
    metric_name: str
    records: list[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False
    wall_clock_seconds: float = 0.0

    def __eq__(self, other: object) -> bool:
        # wall-clock time is the only non-deterministic field
        if not isinstance(other, TrainReport):
            return NotImplemented
        skip = {"wall_clock_seconds"}
        return self.model_dump(exclude=skip) == other.model_dump(exclude=skip)

    @property
    def best(self) -> Optional[EpochRecord]:
        if self.best_epoch is None:
            return None
        return self.records[self.best_epoch]


class LabelledSequence(Protocol):
    """A patient's ordered ROI slices (T, S, S) with its label."""
    patient_id: str
    rois: np.ndarray
    label: int


@dataclass
class _Selection:
    params: ParameterStore
    best_metric: Optional[float] = None
    best_epoch: Optional[int] = None
    stale: int = 0

    def offer(self, epoch: int, metric: Optional[float],
              params: ParameterStore) -> None:
        if metric is None:
            # no validation data: the latest epoch wins
            self.params, self.best_epoch = params, epoch
            return
        if self.best_metric is None or metric > self.best_metric:
            self.params, self.best_metric, self.best_epoch = params, metric, epoch
            self.stale = 0
        else:
            self.stale += 1


def _epochs(cfg: TrainConfig, desc: str):
    return tqdm(range(cfg.epochs),
                desc=desc,
                unit="epoch",
                disable=not settings.progress,
                leave=False)


def _run_epochs(cfg: TrainConfig, params: ParameterStore, metric_name: str,
                desc: str, epoch_fn: Callable[[int, ParameterStore],
                                              tuple[ParameterStore, float]],
                validate: Callable[[ParameterStore], tuple[Optional[float],
                                                           Optional[float]]]
                ) -> tuple[ParameterStore, TrainReport]:
    start = time.perf_counter()
    device = get_device().device
    params = params.to(device=device)
    report = TrainReport(metric_name=metric_name)
    selection = _Selection(params=params)
    for epoch in _epochs(cfg, desc):
        params, train_loss = epoch_fn(epoch, params)
        val_loss, val_metric = validate(params)
        report.records.append(
            EpochRecord(epoch=epoch,
                        train_loss=train_loss,
                        val_loss=val_loss,
                        val_metric=val_metric))
        logger.info("%s epoch %d: train_loss=%.5f val_loss=%s %s=%s", desc,
                    epoch, train_loss,
                    "-" if val_loss is None else f"{val_loss:.5f}",
                    metric_name,
                    "-" if val_metric is None else f"{val_metric:.4f}")
        selection.offer(epoch, val_metric, params)
        if 0 < cfg.early_stop_patience <= selection.stale:
            logger.info("%s stopped early after epoch %d", desc, epoch)
            report.stopped_early = True
            break
    report.best_epoch = selection.best_epoch
    report.wall_clock_seconds = time.perf_counter() - start
    logger.info("%s completed in %.2fs on %s", desc, report.wall_clock_seconds,
                device)
    # trained stores are handed back on the CPU
    return selection.params.to(device=torch.device("cpu")), report


def _batches(n: int, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
    return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def _sample_seed(cfg: TrainConfig, epoch: int, index: int) -> int:
    return int(
        np.random.default_rng([cfg.seed, epoch, index]).integers(2**31 - 1))


# -- segmentation -----------------------------------------------------------


def _segmentation_pairs(records: Sequence[PatientRecord],
                        split: str) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for record in records:
        if record.masks is None:
            raise TrainError(
                f"{split} patient {record.patient_id} has no masks")
        pairs.extend(zip(record.slices, record.masks))
    return pairs


def validation_dice(params: ParameterStore, config,
                    pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean Dice over slices with lesions (every slice when none has one)."""
    images = np.stack([image for image, _ in pairs])
    masks = np.stack([mask for _, mask in pairs])
    predicted = (segment(params, images, config) >= 0.5).astype(np.uint8)
    scored = [i for i in range(len(masks)) if masks[i].any()]
    scored = scored or list(range(len(masks)))
    return float(np.mean([dice(predicted[i], masks[i]) for i in scored]))


def train_segmenter(config,
                    train_set: Sequence[PatientRecord],
                    val_set: Sequence[PatientRecord],
                    train_cfg: TrainConfig,
                    opt_cfg: OptimizerConfig,
                    augmentation: Optional[AugmentationConfig] = None,
                    initial: Optional[ParameterStore] = None
                    ) -> tuple[ParameterStore, TrainReport]:
    """Train a segmenter on preprocessed patients; selects on validation Dice."""
    if not is_segmenter(config):
        raise TrainError(f"{type(config).__name__} is not a segmenter config")
    pairs = _segmentation_pairs(train_set, "train")
    if not pairs:
        raise TrainError("training set is empty")
    val_pairs = _segmentation_pairs(val_set, "validation")
    params = initial if initial is not None else init_params(
        config, train_cfg.seed)

    def samples(epoch: int, index: int) -> list[tuple[np.ndarray, np.ndarray]]:
        image, mask = pairs[index]
        if augmentation is None or augmentation.copies_per_sample == 0:
            return [(image, mask)]
        return augment(image, mask, augmentation,
                       _sample_seed(train_cfg, epoch, index))

    def epoch_fn(epoch: int, params: ParameterStore):
        losses = []
        for batch in _batches(len(pairs), train_cfg, epoch):
            drawn = [s for index in batch for s in samples(epoch, int(index))]
            images = np.stack([image for image, _ in drawn])
            masks = torch.as_tensor(np.stack([mask for _, mask in drawn]))
            cache = segment_forward_cached(params, images, config)
            loss, grad = seg_loss_grad(cache.output[:, 0],
                                       masks.to(cache.output),
                                       train_cfg.seg_loss)
            grads = backward(params, cache, grad[:, None])
            params = sgd_step(params, grads, opt_cfg)
            losses.append(loss)
        return params, float(np.mean(losses))

    def validate(params: ParameterStore):
        if not val_pairs:
            return None, None
        images = np.stack([image for image, _ in val_pairs])
        masks = torch.as_tensor(np.stack([mask for _, mask in val_pairs]))
        probs = torch.as_tensor(segment(params, images, config))
        val_loss, _ = seg_loss_grad(probs, masks.to(probs), train_cfg.seg_loss)
        return val_loss, validation_dice(params, config, val_pairs)

    return _run_epochs(train_cfg, params, "dice", "segmenter", epoch_fn,
                       validate)


# -- classification ---------------------------------------------------------


def _check_rois(sequences: Sequence[LabelledSequence], split: str) -> None:
    for seq in sequences:
        if seq.rois.ndim != 3 or len(seq.rois) == 0:
            raise TrainError(
                f"{split} patient {seq.patient_id} has no ROI slices")


def patient_probability(params: ParameterStore, config, rois: np.ndarray) -> float:
    """Lesion probability for one patient.

    Recurrent models read the whole sequence; slice classifiers take the
    maximum over per-slice probabilities.
    """
    rois = np.asarray(rois, dtype=np.float64)
    if isinstance(config, RecurrentConfig):
        logits = run_forward(params, rois[None, :, None], config)
    else:
        logits = run_forward(params, rois[:, None], config)
    probs = torch.softmax(logits.to(torch.float64), dim=-1)[:, 1]
    return float(probs.max())


def predict_patients(params: ParameterStore, config,
                     sequences: Sequence[LabelledSequence]) -> np.ndarray:
    return np.array(
        [patient_probability(params, config, s.rois) for s in sequences])


def train_classifier(config,
                     train_set: Sequence[LabelledSequence],
                     val_set: Sequence[LabelledSequence],
                     train_cfg: TrainConfig,
                     opt_cfg: OptimizerConfig,
                     initial: Optional[ParameterStore] = None
                     ) -> tuple[ParameterStore, TrainReport]:
    """Train a classifier on ROI sequences; selects on validation accuracy."""
    if is_segmenter(config):
        raise TrainError(f"{type(config).__name__} is not a classifier config")
    if not train_set:
        raise TrainError("training set is empty")
    _check_rois(train_set, "train")
    _check_rois(val_set, "validation")
    params = initial if initial is not None else init_params(
        config, train_cfg.seed)
    recurrent = isinstance(config, RecurrentConfig)

    if recurrent:
        units = [(s.rois, s.label) for s in train_set]
    else:
        # every slice carries its patient's label
        units = [(roi, s.label) for s in train_set for roi in s.rois]

    def epoch_fn(epoch: int, params: ParameterStore):
        losses = []
        for batch in _batches(len(units), train_cfg, epoch):
            if recurrent:
                total = None
                for index in batch:
                    rois, label = units[int(index)]
                    cache = forward_cached(
                        params, np.asarray(rois)[None, :, None], config)
                    loss, grad = cls_loss_grad(cache.output, torch.tensor([label]))
                    total = accumulate(total, backward(params, cache, grad))
                    losses.append(loss)
                grads = scale(total, 1.0 / len(batch))
            else:
                images = np.stack([units[int(i)][0] for i in batch])[:, None]
                labels = torch.tensor([units[int(i)][1] for i in batch])
                cache = forward_cached(params, images, config)
                loss, grad = cls_loss_grad(cache.output, labels)
                grads = backward(params, cache, grad)
                losses.append(loss)
            params = sgd_step(params, grads, opt_cfg)
        return params, float(np.mean(losses))

    def validate(params: ParameterStore):
        if not val_set:
            return None, None
        probs = predict_patients(params, config, val_set)
        labels = np.array([s.label for s in val_set])
        clipped = np.clip(probs, 1e-7, 1 - 1e-7)
        val_loss = float(-np.mean(labels * np.log(clipped) +
                                  (1 - labels) * np.log1p(-clipped)))
        accuracy = float(np.mean((probs >= 0.5).astype(int) == labels))
        return val_loss, accuracy

    name = "recurrent" if recurrent else "classifier"
    return _run_epochs(train_cfg, params, "accuracy", name, epoch_fn, validate)
