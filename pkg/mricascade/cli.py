"""Command-line entry point: synth, run, sweep, overlay, compare, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .config import resolve_seed, settings
from .dataio import (DatasetError, SyntheticConfig, generate_synthetic,
                     load_manifest, load_patient, load_patients)
from .metrics import MetricsError
from .nets import NetError, init_params
from .pipelines import (PipelineConfigs, PipelineError, PipelineKind,
                        PipelineResult, compare, execute_pipeline, plot_sweep,
                        render_overlay, segment_slices, sweep_training_fraction,
                        write_overlay)
from .preprocess import (PreprocessError, augment, materialize_augmentations,
                         preprocess_patient)
from .runs import RunStore
from .runtime import configure_determinism, get_device
from .train import (TrainError, TrainReport, load_checkpoint_config,
                    load_pretrained, run_suite, save_checkpoint)

logger = logging.getLogger("mricascade")

DEFAULT_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9)


class ConfigError(ValueError):

    def __init__(self, message: str, section: str | None = None):
        super().__init__(message)
        self.section = section


class SweepSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: tuple[int, ...] = (0, 1, 2)
    retrain_segmenter: bool = True
    workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("fractions")
    @classmethod
    def _open_unit_interval(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or not all(0.0 < f < 1.0 for f in value):
            raise ValueError("fractions must be non-empty and lie in (0, 1)")
        return value


class RunConfig(PipelineConfigs):
    dataset: Path
    kinds: tuple[PipelineKind, ...] = tuple(PipelineKind)
    out: Optional[Path] = None
    seed: int = 0
    sweep: SweepSettings = SweepSettings()

    @field_validator("dataset")
    @classmethod
    def _dataset_exists(cls, value: Path) -> Path:
        if not value.exists():
            raise ValueError(f"dataset path does not exist: {value}")
        return value

    @field_validator("kinds")
    @classmethod
    def _some_kinds(cls, value: tuple[PipelineKind, ...]):
        if not value:
            raise ValueError("at least one pipeline kind is required")
        return value

    def pipeline_configs(self) -> PipelineConfigs:
        return PipelineConfigs(
            **{name: getattr(self, name) for name in PipelineConfigs.model_fields})


def _resolve_keys(table: dict, keys: tuple[str, ...], base: Path) -> None:
    for key in keys:
        value = table.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            table[key] = str(base / value)


def _resolve_relative(raw: dict, base: Path) -> dict:
    _resolve_keys(raw, ("dataset", "out"), base)
    if isinstance(raw.get("pretrained"), dict):
        _resolve_keys(raw["pretrained"], ("segmenter", "classifier"), base)
    return raw


def load_run_config(path: Path | str) -> RunConfig:
    """Parse a TOML run config; paths are relative to the file's directory."""
    path = Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}", section="config") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", section="config") from exc
    try:
        return RunConfig.model_validate(_resolve_relative(raw, path.parent))
    except ValidationError as exc:
        first = exc.errors()[0]
        section = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{path}: {section}: {first['msg']}",
                          section=section) from exc


def _report_without_clock(report: Optional[TrainReport]) -> Optional[TrainReport]:
    # durations go to runs.json so artifacts stay identical across reruns
    if report is None:
        return None
    return report.model_copy(update={"wall_clock_seconds": 0.0})


def _dump_augmentations(patients, configs, seed: int, out: Path) -> None:
    # first slice of every patient with masks, one file set per patient
    for index, patient in enumerate(patients):
        if patient.masks is None or not len(patient.slices):
            continue
        pairs = augment(patient.slices[0], patient.masks[0],
                        configs.augmentation, seed + index)
        materialize_augmentations(pairs, out, prefix=patient.patient_id)


# -- commands ---------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SyntheticConfig(n_patients=args.patients,
                          slices_per_patient=args.slices,
                          image_size=args.size,
                          lesion_probability=args.lesion_probability,
                          texture_contrast=args.contrast,
                          seed=resolve_seed(args.seed, 0))
    out = Path(args.out) if args.out else settings.output_dir / "synthetic"
    manifest = generate_synthetic(cfg, out)
    print(
        json.dumps({
            "manifest": str(out / "manifest.json"),
            "patients": len(manifest.patients)
        }))
    return 0


def _out_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    return config.out or settings.output_dir


def cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    seed = resolve_seed(args.seed, config.seed)
    kinds = [PipelineKind(k) for k in (args.kinds or config.kinds)]
    out = _out_dir(args, config)
    configs = config.pipeline_configs()
    configure_determinism()
    logger.info("Running %s on %s (seed %d, device %s)",
                ", ".join(k.value for k in kinds), config.dataset, seed,
                get_device().name)

    manifest = load_manifest(config.dataset)
    patients = [
        preprocess_patient(p, configs.preprocess)
        for p in load_patients(manifest)
    ]
    if configs.augmentation.materialize:
        _dump_augmentations(patients, configs, seed, out / "augmentations")
    store = RunStore()
    results = []
    for kind in kinds:
        record = store.create(kind.value)
        store.update(record.id, "running")
        start = time.perf_counter()
        try:
            run = execute_pipeline(kind, manifest, configs, seed,
                                   patients=patients)
        except Exception as exc:
            store.update(record.id, "failed", str(exc))
            store.write(out / "runs.json")
            raise
        kind_dir = out / kind.value
        save_checkpoint(run.segmenter.params, kind_dir / "segmenter.nta",
                        run.segmenter.config,
                        _report_without_clock(run.segmenter.report))
        save_checkpoint(run.classifier_params, kind_dir / "classifier.nta",
                        run.classifier_config,
                        _report_without_clock(run.classifier_report))
        metrics_path = kind_dir / "metrics.json"
        metrics_path.write_text(run.result.model_dump_json(indent=2))
        store.update(record.id, "completed",
                     f"completed in {time.perf_counter() - start:.2f}s",
                     result_path=str(metrics_path))
        results.append(run.result)

    table = compare(results)
    (out / "comparison.md").write_text(table.to_markdown())
    table.to_csv(out / "comparison.csv")
    store.write(out / "runs.json")
    print(table.to_markdown(), end="")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    seeds = args.seeds or list(config.sweep.seeds)
    fractions = args.fractions or list(config.sweep.fractions)
    kinds = args.kinds or list(config.kinds)
    out = _out_dir(args, config)
    workers = args.workers or config.sweep.workers or settings.workers
    retrain = config.sweep.retrain_segmenter and not args.classifier_only
    configure_determinism()

    store = RunStore()
    report = sweep_training_fraction(kinds,
                                     fractions,
                                     seeds,
                                     load_manifest(config.dataset),
                                     config.pipeline_configs(),
                                     retrain_segmenter=retrain,
                                     workers=workers,
                                     store=store)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "sweep.csv")
    report.curves().to_csv(out / "sweep_curves.csv", index=False)
    plots = plot_sweep(report, out)
    store.write(out / "runs.json")
    print(
        json.dumps({
            "cells": len(report.cells),
            "csv": str(out / "sweep.csv"),
            "plots": [str(p) for p in plots],
        }))
    return 0


def _checkpoint_path(checkpoint: str) -> Path:
    path = Path(checkpoint)
    return path / "segmenter.nta" if path.is_dir() else path


def cmd_overlay(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    checkpoint = _checkpoint_path(args.checkpoint)
    seg_config = load_checkpoint_config(checkpoint)
    params = load_pretrained(init_params(seg_config, 0), checkpoint,
                             strict=True).params
    manifest = load_manifest(config.dataset)
    raw = load_patient(manifest, args.patient)
    patient = preprocess_patient(raw, config.preprocess)
    probs = segment_slices(patient, params, seg_config)

    out = Path(args.out) if args.out else settings.output_dir / "overlays"
    written = []
    for index, prob in enumerate(probs):
        overlay = render_overlay(raw.slices[index], patient.slices[index],
                                 None if patient.masks is None else
                                 patient.masks[index], prob,
                                 config.roi.threshold)
        path = out / f"{patient.patient_id}_slice_{index:03d}.png"
        written.append(str(write_overlay(overlay, path)))
    print(json.dumps({"patient": patient.patient_id, "images": written}))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    results = []
    for name in args.results:
        path = Path(name)
        if not path.is_file():
            raise PipelineError(f"results file not found: {path}")
        results.append(PipelineResult.model_validate_json(path.read_text()))
    table = compare(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.md").write_text(table.to_markdown())
        table.to_csv(out / "comparison.csv")
    print(table.to_markdown(), end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = run_suite(epsilon=args.epsilon,
                        seed=resolve_seed(args.seed, 0),
                        samples=args.samples)
    summary = {
        name: {
            **report.to_dict(), "passed": report.passed(args.tolerance)
        }
        for name, report in reports.items()
    }
    for entry in summary.values():
        entry.pop("per_tensor")
    print(json.dumps(summary, indent=2))
    return 0 if all(entry["passed"] for entry in summary.values()) else 1


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mricascade",
        description="Segment-then-classify MRI pipelines at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)
    kinds = [k.value for k in PipelineKind]

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--patients", type=int, default=200)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--slices", type=int, default=4)
    synth.add_argument("--lesion-probability", type=float, default=0.5)
    synth.add_argument("--contrast", type=float, default=0.35)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out")
    synth.set_defaults(func=cmd_synth)

    run = sub.add_parser("run", help="train and evaluate pipelines")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--kinds", nargs="+", choices=kinds)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="training-fraction sweep")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out")
    sweep.add_argument("--kinds", nargs="+", choices=kinds)
    sweep.add_argument("--fractions", nargs="+", type=float)
    sweep.add_argument("--seeds", nargs="+", type=int)
    sweep.add_argument("--workers", type=int)
    sweep.add_argument("--classifier-only",
                       action="store_true",
                       help="train each segmenter once and retrain only "
                       "the classifier per cell")
    sweep.set_defaults(func=cmd_sweep)

    overlay = sub.add_parser("overlay", help="render prediction overlays")
    overlay.add_argument("--checkpoint",
                         required=True,
                         help="<run>/<kind> directory or a segmenter .nta")
    overlay.add_argument("--patient", required=True)
    overlay.add_argument("--config", required=True)
    overlay.add_argument("--out")
    overlay.set_defaults(func=cmd_overlay)

    comp = sub.add_parser("compare", help="table from saved metrics.json files")
    comp.add_argument("--results", nargs="+", required=True)
    comp.add_argument("--out")
    comp.set_defaults(func=cmd_compare)

    grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    grad.add_argument("--epsilon", type=float, default=1e-5)
    grad.add_argument("--samples", type=int, default=50)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    grad.add_argument("--seed", type=int)
    grad.set_defaults(func=cmd_gradcheck)
    return parser


VALIDATION_ERRORS = (ConfigError, ValidationError)
RUNTIME_ERRORS = (DatasetError, PreprocessError, NetError, TrainError,
                  MetricsError, PipelineError)


def _error_payload(exc: Exception) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.section:
        payload["section"] = exc.section
    elif isinstance(exc, ValidationError):
        errors = exc.errors()
        if errors:
            payload["section"] = ".".join(str(p) for p in errors[0]["loc"])
    elif isinstance(exc, DatasetError) and exc.key:
        payload["key"] = exc.key
    return payload


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level.upper(),
                        format="%(asctime)s [%(levelname)s] %(message)s")
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except VALIDATION_ERRORS as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("%s failed", args.command)
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 1
    logger.info("%s completed in %.2fs", args.command,
                time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
