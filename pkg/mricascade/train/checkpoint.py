from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import NamedTuple, Optional

from pydantic import BaseModel

from ..nets import (ArchiveError, NetConfig, ParameterStore, parse_net_config,
                    read_archive, write_archive)
from .losses import TrainError
from .loops import TrainReport

logger = logging.getLogger(__name__)


class PretrainedLoad(NamedTuple):
    params: ParameterStore
    replaced: tuple[str, ...]
    skipped: tuple[str, ...]  # archive tensors with no same-shaped target


def sidecar(path: Path | str, role: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.{role}.json")


def save_checkpoint(params: ParameterStore,
                    path: Path | str,
                    config: Optional[BaseModel] = None,
                    report: Optional[TrainReport] = None) -> Path:
    """Write the NTA archive plus optional config/report JSON next to it."""
    path = write_archive(params, path)
    if config is not None:
        sidecar(path, "config").write_text(config.model_dump_json(indent=2))
    if report is not None:
        sidecar(path, "report").write_text(report.model_dump_json(indent=2))
    logger.info("Saved %d tensors to %s", len(params), path)
    return path


def load_checkpoint_config(path: Path | str) -> NetConfig:
    config_path = sidecar(path, "config")
    if not config_path.is_file():
        raise ArchiveError(f"checkpoint config not found: {config_path}")
    try:
        return parse_net_config(json.loads(config_path.read_text()))
    except ValueError as exc:
        raise ArchiveError(f"{config_path}: {exc}") from exc


def load_pretrained(template: ParameterStore,
                    path: Path | str,
                    strict: bool = True) -> PretrainedLoad:
    """Load an archive into the layout of ``template``.

    Strict loading requires identical names and shapes. Non-strict loading
    replaces the same-named, same-shaped tensors and leaves the rest of the
    template untouched.
    """
    archive = read_archive(path)
    if strict:
        missing = [name for name in template if name not in archive]
        extra = [name for name in archive if name not in template]
        if missing or extra:
            raise TrainError(f"strict load from {path}: missing {missing}, "
                             f"unexpected {extra}")
        for name, tensor in template.items():
            if archive[name].shape != tensor.shape:
                raise TrainError(
                    f"strict load from {path}: shape mismatch for {name!r}")

    updates = {}
    skipped = []
    for name, tensor in archive.items():
        if name in template and template[name].shape == tensor.shape:
            updates[name] = tensor.to(dtype=template[name].dtype,
                                      device=template[name].device)
        else:
            skipped.append(name)
    if skipped:
        logger.info("Transfer load skipped %d tensors from %s", len(skipped),
                    path)
    return PretrainedLoad(params=template.replace(updates),
                          replaced=tuple(updates),
                          skipped=tuple(skipped))
