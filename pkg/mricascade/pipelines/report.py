"""Comparison tables and the training-fraction sweep."""
from __future__ import annotations

import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import matplotlib

matplotlib.use("Agg")  # files only, no display
import matplotlib.pyplot as plt
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ..dataio import DatasetManifest, PatientRecord, load_patients, split_dataset
from ..preprocess import preprocess_patient
from ..runs import RunStore
from ..runtime import configure_determinism
from ..train import train_segmenter
from .cascade import (PipelineConfigs, PipelineKind, PipelineResult,
                      SegmenterStage, execute_pipeline, initial_params)
from .regions import PipelineError

logger = logging.getLogger(__name__)

COLUMNS = (
    ("Accuracy", "accuracy"),
    ("F1", "f1"),
    ("Precision", "precision"),
    ("Recall (Sens.)", "recall"),
    ("Spec.", "specificity"),
    ("Dice", "dice"),
)
SWEEP_COLUMNS = ["kind", "fraction", "seed", "accuracy", "sensitivity"]


@dataclass(frozen=True)
class ComparisonTable:
    labels: tuple[str, ...]
    values: tuple[tuple[Optional[float], ...], ...]

    @property
    def bold(self) -> list[list[bool]]:
        """Cells that attain their column's maximum over defined values."""
        marks = [[False] * len(COLUMNS) for _ in self.labels]
        for col in range(len(COLUMNS)):
            defined = [row[col] for row in self.values if row[col] is not None]
            if not defined:
                continue
            best = max(defined)
            for r, row in enumerate(self.values):
                marks[r][col] = row[col] is not None and row[col] == best
        return marks

    def to_markdown(self) -> str:
        header = "| Pipeline | " + " | ".join(c for c, _ in COLUMNS) + " |"
        rule = "|---|" + "---:|" * len(COLUMNS)
        lines = [header, rule]
        for label, row, marks in zip(self.labels, self.values, self.bold):
            cells = []
            for value, mark in zip(row, marks):
                if value is None:
                    cells.append("-")
                else:
                    cells.append(f"**{value:.4f}**" if mark else f"{value:.4f}")
            lines.append(f"| {label} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(list(self.values),
                             columns=[c for c, _ in COLUMNS],
                             dtype=float)
        frame.insert(0, "Pipeline", list(self.labels))
        return frame

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path


def _row_label(result: PipelineResult, duplicated: bool) -> str:
    if not duplicated:
        return result.kind.value
    return (f"{result.kind.value} (fraction {result.train_fraction:g}, "
            f"seed {result.seed})")


def compare(results: Sequence[PipelineResult]) -> ComparisonTable:
    if not results:
        raise PipelineError("compare needs at least one result")
    kinds = [r.kind for r in results]
    labels = tuple(_row_label(r, kinds.count(r.kind) > 1) for r in results)
    values = tuple(
        tuple(getattr(r.metrics, field) for _, field in COLUMNS)
        for r in results)
    return ComparisonTable(labels=labels, values=values)


# -- sweep ------------------------------------------------------------------


class SweepCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PipelineKind
    fraction: float
    seed: int
    accuracy: Optional[float] = None
    sensitivity: Optional[float] = None
    status: Literal["completed", "failed"] = "completed"


class SweepReport(BaseModel):
    cells: list[SweepCell]

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "kind": c.kind.value,
            "fraction": c.fraction,
            "seed": c.seed,
            "accuracy": c.accuracy,
            "sensitivity": c.sensitivity,
        } for c in self.cells]
        frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        metrics = ["accuracy", "sensitivity"]
        frame[metrics] = frame[metrics].astype(float)
        return frame

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path

    def curves(self) -> pd.DataFrame:
        """Mean, std, min and max over seeds per (kind, fraction)."""
        frame = self.to_frame()
        grouped = frame.groupby(["kind", "fraction"], sort=True)[[
            "accuracy", "sensitivity"
        ]].agg(["mean", "std", "min", "max"])
        grouped.columns = [f"{metric}_{stat}" for metric, stat in grouped.columns]
        return grouped.reset_index()

    def is_complete(self, kinds: Sequence[PipelineKind | str],
                    fractions: Sequence[float], seeds: Sequence[int]) -> bool:
        have = {(c.kind.value, c.fraction, c.seed) for c in self.cells}
        want = {(PipelineKind(k).value, f, s)
                for k in kinds for f in fractions for s in seeds}
        return have == want and len(self.cells) == len(want)


def _run_cell(kind: PipelineKind, fraction: float, seed: int,
              dataset: DatasetManifest, configs: PipelineConfigs,
              segmenter: Optional[SegmenterStage],
              patients: Optional[list[PatientRecord]]) -> PipelineResult:
    configure_determinism()
    return execute_pipeline(kind,
                            dataset,
                            configs.with_train_fraction(fraction),
                            seed,
                            segmenter=segmenter,
                            patients=patients).result


def _shared_segmenter(kind: PipelineKind, dataset: DatasetManifest,
                      patients: list[PatientRecord], configs: PipelineConfigs,
                      fraction: float, seed: int) -> SegmenterStage:
    # the train split at the smallest fraction is a subset of every larger one
    split = configs.split.model_copy(update={
        "train_fraction": fraction,
        "seed": seed
    })
    train_manifest, val_manifest = split_dataset(dataset, split)
    by_id = {p.patient_id: p for p in patients}
    seg_config = configs.segmenter_config(kind)
    params, report = train_segmenter(
        seg_config, [by_id[i] for i in train_manifest.ids],
        [by_id[i] for i in val_manifest.ids],
        configs.train_segmenter.model_copy(update={"seed": seed}),
        configs.optimizer, configs.augmentation,
        initial_params(seg_config, seed, configs.pretrained.segmenter,
                       configs.pretrained.strict))
    return SegmenterStage(params, seg_config, report)


def sweep_training_fraction(kinds: Sequence[PipelineKind | str],
                            fractions: Sequence[float],
                            seeds: Sequence[int],
                            dataset: DatasetManifest,
                            configs: PipelineConfigs,
                            retrain_segmenter: bool = True,
                            workers: int = 1,
                            store: Optional[RunStore] = None) -> SweepReport:
    """Run the full (kind, fraction, seed) grid.

    With ``retrain_segmenter=False`` only the classifier is retrained per
    cell; the segmenter is trained once per (segmenter, seed) on the split of
    the smallest fraction.
    """
    kinds = [PipelineKind(k) for k in kinds]
    fractions = sorted(set(float(f) for f in fractions))
    seeds = sorted(set(int(s) for s in seeds))
    if not kinds or not fractions or not seeds:
        raise PipelineError("sweep needs at least one kind, fraction and seed")
    for fraction in fractions:
        if not 0.0 < fraction < 1.0:
            raise PipelineError(f"fractions must lie in (0, 1), got {fraction}")

    start = time.perf_counter()
    patients = [
        preprocess_patient(p, configs.preprocess)
        for p in load_patients(dataset)
    ]
    shared: dict[tuple[str, int], SegmenterStage] = {}
    if not retrain_segmenter:
        for kind in kinds:
            for seed in seeds:
                key = (kind.segmenter, seed)
                if key not in shared:
                    shared[key] = _shared_segmenter(kind, dataset, patients,
                                                    configs, fractions[0], seed)

    grid = [(k, f, s) for k in kinds for f in fractions for s in seeds]
    store = store or RunStore()
    run_ids = {
        cell: store.create(f"sweep:{cell[0].value}:{cell[1]:g}:{cell[2]}").id
        for cell in grid
    }
    results: dict[tuple, SweepCell] = {}

    def record(cell, result: Optional[PipelineResult], error: Optional[str]):
        kind, fraction, seed = cell
        if result is None:
            store.update(run_ids[cell], "failed", error or "failed")
            results[cell] = SweepCell(kind=kind,
                                      fraction=fraction,
                                      seed=seed,
                                      status="failed")
            return
        store.update(run_ids[cell], "completed", "ok")
        results[cell] = SweepCell(kind=kind,
                                  fraction=fraction,
                                  seed=seed,
                                  accuracy=result.metrics.accuracy,
                                  sensitivity=result.metrics.recall)

    if workers <= 1:
        for cell in grid:
            kind, fraction, seed = cell
            store.update(run_ids[cell], "running")
            try:
                result = _run_cell(kind, fraction, seed, dataset, configs,
                                   shared.get((kind.segmenter, seed)), patients)
            except Exception as exc:  # noqa: BLE001
                logger.exception("Sweep cell %s failed", cell)
                record(cell, None, str(exc))
                continue
            record(cell, result, None)
    else:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers,
                                 mp_context=context) as pool:
            futures = {}
            for cell in grid:
                kind, fraction, seed = cell
                store.update(run_ids[cell], "running")
                futures[pool.submit(_run_cell, kind, fraction, seed, dataset,
                                    configs, shared.get((kind.segmenter, seed)),
                                    None)] = cell
            for future in as_completed(futures):
                cell = futures[future]
                try:
                    result = future.result()
                except Exception as exc:  # noqa: BLE001
                    logger.exception("Sweep cell %s failed", cell)
                    record(cell, None, str(exc))
                    continue
                record(cell, result, None)

    logger.info("Sweep of %d cells completed in %.2fs", len(grid),
                time.perf_counter() - start)
    # merged by grid coordinates, independent of completion order
    return SweepReport(cells=[results[cell] for cell in grid])


def plot_sweep(report: SweepReport,
               out_dir: Path | str,
               stem: str = "sweep",
               formats: Sequence[str] = ("png", "svg")) -> list[Path]:
    """Accuracy and sensitivity against training percentage, one line per kind."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = report.curves()
    fig, axes = plt.subplots(1, 2, figsize=(12, 4.5))
    for ax, metric, title in ((axes[0], "accuracy", "Accuracy"),
                              (axes[1], "sensitivity", "Sensitivity")):
        for kind, rows in curves.groupby("kind", sort=False):
            x = rows["fraction"].to_numpy() * 100.0
            ax.plot(x, rows[f"{metric}_mean"], "-o", linewidth=2, label=kind)
            ax.fill_between(x,
                            rows[f"{metric}_min"].to_numpy(dtype=float),
                            rows[f"{metric}_max"].to_numpy(dtype=float),
                            alpha=0.15)
        ax.set_xlabel("Training data (%)")
        ax.set_ylabel(title)
        ax.set_title(f"{title} vs. training fraction")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    paths = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        fig.savefig(path)
        paths.append(path)
    plt.close(fig)
    return paths


def mean_by_fraction(report: SweepReport, metric: str) -> dict[str, dict[float, float]]:
    curves = report.curves()
    out: dict[str, dict[float, float]] = {}
    for row in curves.itertuples(index=False):
        value = getattr(row, f"{metric}_mean")
        out.setdefault(row.kind, {})[row.fraction] = (
            float("nan") if pd.isna(value) else float(value))
    return out
