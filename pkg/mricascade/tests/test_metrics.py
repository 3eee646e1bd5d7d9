import numpy as np
import pytest

from mricascade.metrics import (ConfusionMatrix, MetricsError, MetricsReport,
                                classification_metrics, confusion, dice,
                                pixel_confusion, summarize_dice)


def test_confusion_enumeration():
    cm = confusion([1, 1, 0, 0], [1, 0, 0, 1])
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (1, 1, 1, 1)


def test_confusion_agreement_extremes():
    labels = [1, 0, 1, 1, 0]
    same = confusion(labels, labels)
    assert same.fp == same.fn == 0
    flipped = confusion([1 - v for v in labels], labels)
    assert flipped.tp == flipped.tn == 0


@pytest.mark.parametrize("preds, labels", [([1, 0], [1]), ([2, 0], [1, 0]),
                                           ([], [])])
def test_confusion_rejects_bad_input(preds, labels):
    with pytest.raises(MetricsError):
        confusion(preds, labels)


def test_metrics_from_counts():
    report = classification_metrics(ConfusionMatrix(tp=3, fp=1, fn=2, tn=4))
    assert report.accuracy == pytest.approx(0.70)
    assert report.precision == pytest.approx(0.75)
    assert report.recall == pytest.approx(0.60)
    assert report.f1 == pytest.approx(0.6667, abs=1e-4)
    assert report.specificity == pytest.approx(0.80)


def test_perfect_classifier():
    report = classification_metrics(ConfusionMatrix(tp=5, tn=5))
    for value in (report.accuracy, report.precision, report.recall,
                  report.specificity, report.f1):
        assert value == 1.0


def test_zero_denominators_are_undefined():
    report = classification_metrics(ConfusionMatrix(fn=3, tn=7))
    assert report.precision is None
    assert report.recall == 0.0
    assert report.specificity == 1.0
    assert report.f1 == 0.0
    assert '"precision":null' in report.model_dump_json()


def test_empty_confusion_matrix():
    with pytest.raises(MetricsError):
        classification_metrics(ConfusionMatrix())


def test_f1_lies_between_precision_and_recall():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cm = ConfusionMatrix(**dict(zip(("tp", "fp", "fn", "tn"),
                                        rng.integers(1, 20, size=4).tolist())))
        report = classification_metrics(cm)
        lo, hi = sorted((report.precision, report.recall))
        assert lo - 1e-12 <= report.f1 <= hi + 1e-12
        assert report.accuracy == (cm.tp + cm.tn) / cm.total


def _expected(tp, fp, fn, tn):
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision and recall:
        f1 = 2 * precision * recall / (precision + recall)
    elif tp + fp + fn:
        f1 = 0.0
    else:
        f1 = None
    return {
        "accuracy": (tp + tn) / (tp + fp + fn + tn),
        "precision": precision,
        "recall": recall,
        "specificity": tn / (tn + fp) if tn + fp else None,
        "f1": f1,
    }


def test_random_confusion_matrices_match_direct_formulas():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 1000:
        # a quarter of the counts are zero so undefined ratios come up
        counts = rng.integers(0, 40, size=4) * (rng.random(4) > 0.25)
        if counts.sum() == 0:
            continue
        tp, fp, fn, tn = (int(c) for c in counts)
        report = classification_metrics(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))
        for name, want in _expected(tp, fp, fn, tn).items():
            got = getattr(report, name)
            if want is None:
                assert got is None, (name, counts)
            else:
                assert abs(got - want) <= 1e-12, (name, counts)
        checked += 1


def test_metrics_survive_joint_permutation():
    rng = np.random.default_rng(1)
    preds, labels = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
    order = rng.permutation(30)
    assert confusion(preds, labels) == confusion(preds[order], labels[order])


def test_dice_cases():
    mask = np.zeros((6, 6), np.uint8)
    mask[1:3, 1:3] = 1
    other = np.zeros((6, 6), np.uint8)
    other[4:6, 4:6] = 1
    assert dice(mask, mask) == 1.0
    assert dice(mask, other) == 0.0
    assert dice(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    pred = np.zeros((1, 3), np.uint8)
    truth = np.zeros((1, 3), np.uint8)
    pred[0, :2] = 1
    truth[0, 1:] = 1
    assert dice(pred, truth) == 0.5


def test_dice_rejects_mismatch_and_non_binary():
    with pytest.raises(MetricsError, match="shapes"):
        dice(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(MetricsError, match="binary"):
        dice(np.full((2, 2), 3), np.zeros((2, 2)))


def test_dice_equals_pixelwise_f1():
    rng = np.random.default_rng(2)
    for _ in range(500):
        density = rng.uniform(0.0, 1.0)
        pred = (rng.random((8, 8)) < density).astype(np.uint8)
        truth = (rng.random((8, 8)) < rng.uniform(0.0, 1.0)).astype(np.uint8)
        if not pred.any() and not truth.any():
            continue
        f1 = classification_metrics(pixel_confusion(pred, truth)).f1
        assert abs(dice(pred, truth) - f1) < 1e-12


def test_dice_summary_averages_slices_then_patients():
    full = np.ones((2, 2), np.uint8)
    empty = np.zeros((2, 2), np.uint8)
    half = np.array([[1, 0], [0, 0]], np.uint8)
    summary = summarize_dice({
        "A": [(full, full), (empty, empty)],  # empty truth is not scored
        "B": [(half, full), (full, full)],
        "C": [(full, empty)],  # no lesion slice at all
    })
    # B slices: 2*1/5 = 0.4 and 1.0
    assert summary.slices == 3
    assert summary.patients == 2
    assert summary.slice_mean == pytest.approx((1.0 + 0.4 + 1.0) / 3)
    assert summary.patient_mean == pytest.approx((1.0 + 0.7) / 2)
    assert summary.pooled == pytest.approx(2 * 9 / (2 * 9 + 0 + 3))


def test_report_round_trips_through_json():
    report = classification_metrics(ConfusionMatrix(tp=1, fn=1, tn=2))
    assert MetricsReport.model_validate_json(report.model_dump_json()) == report
