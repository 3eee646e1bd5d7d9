import os
from pathlib import Path

from pydantic import BaseModel, Field


def _env_path(key: str, default: Path) -> Path:
    value = os.environ.get(key)
    if value:
        return Path(value)
    return default


def _env_bool(key: str, default: bool) -> bool:
    value = os.environ.get(key)
    if value is None:
        return default
    return value.lower() in {"1", "true", "yes", "on"}


def _env_int(key: str, default: int | None = None) -> int | None:
    value = os.environ.get(key)
    if value is None or value.strip() == "":
        return default
    return int(value)


class RuntimeSettings(BaseModel):
    app_name: str = "mricascade"
    version: str = "0.3.0"
    output_dir: Path = Field(
        default_factory=lambda: _env_path("MRICASCADE_OUT", Path("runs")))
    # Read lazily so a test or a shell can export it after import.
    seed_override: int | None = Field(
        default_factory=lambda: _env_int("MRICASCADE_SEED"))
    device: str = Field(
        default_factory=lambda: os.environ.get("MRICASCADE_DEVICE", "cpu"))
    workers: int = Field(
        default_factory=lambda: _env_int("MRICASCADE_WORKERS", 1) or 1)
    progress: bool = Field(
        default_factory=lambda: _env_bool("MRICASCADE_PROGRESS", True))
    log_level: str = Field(
        default_factory=lambda: os.environ.get("MRICASCADE_LOG_LEVEL", "INFO"))
    torch_threads: int = 1  # fixed so reductions stay reproducible


settings = RuntimeSettings()


def resolve_seed(flag: int | None, configured: int) -> int:
    """Seed precedence: explicit flag, then MRICASCADE_SEED, then the file."""
    if flag is not None:
        return flag
    env_seed = _env_int("MRICASCADE_SEED")
    if env_seed is not None:
        return env_seed
    return configured
