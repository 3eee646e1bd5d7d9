"""Confusion-matrix metrics and the Dice overlap score.

Undefined values (zero denominators) are ``None`` and serialise to JSON
``null``; they are never replaced by 0.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class MetricsError(ValueError):
    pass


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(tp=self.tp + other.tp,
                               fp=self.fp + other.fp,
                               fn=self.fn + other.fn,
                               tn=self.tn + other.tn)


class DiceSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    slice_mean: Optional[float] = None
    patient_mean: Optional[float] = None  # headline value
    pooled: Optional[float] = None
    slices: int = 0
    patients: int = 0


class MetricsReport(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    f1: Optional[float] = None
    dice: Optional[float] = None
    dice_detail: Optional[DiceSummary] = None
    confusion: Optional[ConfusionMatrix] = None


def _binary(values, name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.dtype == bool:
        return array.astype(np.uint8)
    if not np.isin(array, (0, 1)).all():
        raise MetricsError(f"{name} must be binary 0/1")
    return array.astype(np.uint8)


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    preds = _binary(predictions, "predictions").ravel()
    truth = _binary(labels, "labels").ravel()
    if preds.shape != truth.shape:
        raise MetricsError(
            f"{preds.size} predictions but {truth.size} labels")
    if preds.size == 0:
        raise MetricsError("confusion needs at least one decision")
    return ConfusionMatrix(tp=int(np.sum((preds == 1) & (truth == 1))),
                           fp=int(np.sum((preds == 1) & (truth == 0))),
                           fn=int(np.sum((preds == 0) & (truth == 1))),
                           tn=int(np.sum((preds == 0) & (truth == 0))))


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total < 1:
        raise MetricsError("confusion matrix is empty")
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        recall=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        # harmonic mean of precision and recall, written over raw counts;
        # 0.0 when tp is 0 but fp + fn is not, even if precision is undefined
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn),
        confusion=cm,
    )


def _mask_pair(pred_mask, gt_mask) -> tuple[np.ndarray, np.ndarray]:
    pred = _binary(pred_mask, "pred_mask")
    truth = _binary(gt_mask, "gt_mask")
    if pred.shape != truth.shape:
        raise MetricsError(
            f"mask shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def dice(pred_mask, gt_mask) -> float:
    """2|P n G| / (|P| + |G|); two empty masks score 1.0."""
    pred, truth = _mask_pair(pred_mask, gt_mask)
    area = int(pred.sum()) + int(truth.sum())
    if area == 0:
        return 1.0
    return 2.0 * int(np.sum(pred & truth)) / area


def pixel_confusion(pred_mask, gt_mask) -> ConfusionMatrix:
    pred, truth = _mask_pair(pred_mask, gt_mask)
    return confusion(pred.ravel(), truth.ravel())


def summarize_dice(per_patient: Mapping[str, Sequence[tuple[np.ndarray,
                                                            np.ndarray]]]
                   ) -> DiceSummary:
    """Dice over (prediction, ground truth) pairs grouped by patient.

    Only slices with a non-empty ground truth count; patients without any are
    left out of the patient mean.
    """
    slice_scores: list[float] = []
    patient_scores: list[float] = []
    pooled = ConfusionMatrix()
    for pairs in per_patient.values():
        scores = []
        for pred, truth in pairs:
            if not np.any(truth):
                continue
            scores.append(dice(pred, truth))
            pooled = pooled + pixel_confusion(pred, truth)
        if scores:
            slice_scores.extend(scores)
            patient_scores.append(float(np.mean(scores)))
    return DiceSummary(
        slice_mean=float(np.mean(slice_scores)) if slice_scores else None,
        patient_mean=float(np.mean(patient_scores)) if patient_scores else None,
        pooled=_ratio(2 * pooled.tp, 2 * pooled.tp + pooled.fp + pooled.fn),
        slices=len(slice_scores),
        patients=len(patient_scores),
    )
