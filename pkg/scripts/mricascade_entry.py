"""Entry point for a frozen (PyInstaller) build of the mricascade CLI."""
from __future__ import annotations

import multiprocessing
import sys
from pathlib import Path


def _ensure_package_on_path():
    if getattr(sys, "frozen", False):
        base_dir = Path(sys._MEIPASS)  # type: ignore[attr-defined]
    else:
        base_dir = Path(__file__).resolve().parent.parent
    if (base_dir / "mricascade").exists():
        sys.path.insert(0, str(base_dir))


_ensure_package_on_path()
from mricascade.cli import main  # noqa: E402  # after path fix

if __name__ == "__main__":
    # sweep workers use the spawn context
    multiprocessing.freeze_support()
    sys.exit(main())
