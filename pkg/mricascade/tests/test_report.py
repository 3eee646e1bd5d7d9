from types import SimpleNamespace

import pandas as pd
import pytest

from mricascade.metrics import MetricsReport
from mricascade.pipelines import (PipelineError, PipelineKind, PipelineResult,
                                  compare, plot_sweep, sweep_training_fraction)
from mricascade.pipelines import report as report_module
from mricascade.pipelines.cascade import PipelineConfigs
from mricascade.pipelines.report import SweepCell, SweepReport, mean_by_fraction
from mricascade.preprocess import PreprocessConfig
from mricascade.runs import RunStore


def _result(kind="unet_lstm", fraction=0.9, seed=0, **metrics):
    return PipelineResult(kind=kind,
                          metrics=MetricsReport(**metrics),
                          train_fraction=fraction,
                          seed=seed)


def test_single_result_is_bold_where_defined():
    table = compare([_result(accuracy=0.8, f1=0.5, precision=None)])
    row = table.to_markdown().splitlines()[2]
    assert row.startswith("| unet_lstm | **0.8000** | **0.5000** | - |")
    assert table.bold[0][:3] == [True, True, False]


def test_ties_are_all_bold():
    table = compare([
        _result("unet_rnn", accuracy=0.7, recall=0.5),
        _result("unet_lstm", accuracy=0.7, recall=0.9),
    ])
    assert [marks[0] for marks in table.bold] == [True, True]
    assert [marks[3] for marks in table.bold] == [False, True]


def test_markdown_header_and_dashes():
    text = compare([_result(dice=None, accuracy=0.5)]).to_markdown()
    lines = text.splitlines()
    assert lines[0] == ("| Pipeline | Accuracy | F1 | Precision | "
                        "Recall (Sens.) | Spec. | Dice |")
    assert lines[2].endswith("| - |")


def test_repeated_kinds_are_labelled_by_fraction_and_seed():
    table = compare([_result(fraction=0.5, seed=1), _result(fraction=0.9)])
    assert table.labels == ("unet_lstm (fraction 0.5, seed 1)",
                            "unet_lstm (fraction 0.9, seed 0)")


def test_compare_needs_results():
    with pytest.raises(PipelineError):
        compare([])


def test_comparison_csv(tmp_path):
    path = compare([_result(accuracy=0.75)]).to_csv(tmp_path / "c.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns)[:2] == ["Pipeline", "Accuracy"]
    assert frame.loc[0, "Accuracy"] == 0.75
    assert pd.isna(frame.loc[0, "Precision"])


@pytest.fixture()
def fake_cells(monkeypatch):
    """Cells whose accuracy is the training fraction; records each call."""
    calls = []

    def fake_execute(kind, dataset, configs, seed, segmenter=None, patients=None):
        fraction = configs.split.train_fraction
        calls.append((kind, fraction, seed, segmenter))
        if fraction == 0.7 and seed == 1:
            raise PipelineError("boom")
        return SimpleNamespace(result=_result(kind, fraction, seed,
                                              accuracy=fraction,
                                              recall=fraction / 2))

    monkeypatch.setattr(report_module, "execute_pipeline", fake_execute)
    return calls


CONFIGS = PipelineConfigs(preprocess=PreprocessConfig(target_size=16))


def test_sweep_grid_is_complete(small_dataset, fake_cells, tmp_path):
    _, manifest = small_dataset
    store = RunStore()
    kinds = ["unet_rnn", "deepsegnet_rnn"]

    sweep = sweep_training_fraction(kinds, [0.9, 0.5, 0.7], [0, 1], manifest,
                                    CONFIGS, store=store)

    assert len(sweep.cells) == 12
    assert sweep.is_complete(kinds, [0.5, 0.7, 0.9], [0, 1])
    failed = [c for c in sweep.cells if c.status == "failed"]
    assert {(c.kind.value, c.fraction, c.seed) for c in failed} == {
        ("unet_rnn", 0.7, 1), ("deepsegnet_rnn", 0.7, 1)
    }
    assert store.summary()["counts"] == {"completed": 10, "failed": 2}

    frame = pd.read_csv(sweep.to_csv(tmp_path / "sweep.csv"))
    assert list(frame.columns) == ["kind", "fraction", "seed", "accuracy",
                                   "sensitivity"]
    assert len(frame) == 12
    assert all(segmenter is None for *_, segmenter in fake_cells)


def test_classifier_only_sweep_trains_each_segmenter_once(
        small_dataset, fake_cells, monkeypatch):
    _, manifest = small_dataset
    trained = []

    def fake_train(config, train_set, val_set, train_cfg, *args):
        trained.append((config.kind, train_cfg.seed, len(train_set)))
        return {}, None

    monkeypatch.setattr(report_module, "train_segmenter", fake_train)
    sweep_training_fraction(["unet_rnn", "unet_lstm"], [0.5, 0.9], [0, 2],
                            manifest, CONFIGS, retrain_segmenter=False)

    # one per (segmenter, seed), on the smallest fraction's 3 of 6 patients
    assert sorted(trained) == [("unet", 0, 3), ("unet", 2, 3)]
    assert all(segmenter is not None for *_, segmenter in fake_cells)


def test_sweep_rejects_fractions_outside_unit_interval(small_dataset):
    _, manifest = small_dataset
    with pytest.raises(PipelineError):
        sweep_training_fraction(["unet_rnn"], [1.0], [0], manifest, CONFIGS)


def _report():
    cells = [
        SweepCell(kind=PipelineKind(k), fraction=f, seed=s, accuracy=f + s / 10,
                  sensitivity=f)
        for k in ("unet_rnn", "unet_lstm") for f in (0.5, 0.9) for s in (0, 1)
    ]
    return SweepReport(cells=cells)


def test_curves_aggregate_over_seeds():
    curves = _report().curves()
    row = curves[(curves.kind == "unet_rnn") & (curves.fraction == 0.5)].iloc[0]
    assert row["accuracy_mean"] == pytest.approx(0.55)
    assert row["accuracy_min"] == pytest.approx(0.5)
    assert row["accuracy_max"] == pytest.approx(0.6)
    means = mean_by_fraction(_report(), "accuracy")
    assert means["unet_lstm"][0.9] == pytest.approx(0.95)


def test_plots_are_written(tmp_path):
    paths = plot_sweep(_report(), tmp_path)
    assert [p.name for p in paths] == ["sweep.png", "sweep.svg"]
    assert all(p.stat().st_size > 0 for p in paths)


def test_single_point_plot(tmp_path):
    report = SweepReport(cells=[
        SweepCell(kind=PipelineKind.unet_rnn, fraction=0.9, seed=0,
                  accuracy=0.8, sensitivity=0.7)
    ])
    [path] = plot_sweep(report, tmp_path, stem="one", formats=("png", ))
    assert path.is_file()
