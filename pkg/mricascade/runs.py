from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

STATUSES = ("queued", "running", "completed", "failed")


def _now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class RunRecord:
    id: str
    kind: str
    status: str = "queued"
    message: str = ""
    created_at: datetime = field(default_factory=_now)
    updated_at: datetime = field(default_factory=_now)
    result_path: Optional[str] = None

    def to_dict(self):
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "message": self.message,
            "created_at": self.created_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
            "result_path": self.result_path,
        }


class RunStore:
    """Bookkeeping for pipeline runs and sweep cells.

    Timestamps live only here (``runs.json``), never in metrics or checkpoints.
    """

    def __init__(self):
        self._runs: Dict[str, RunRecord] = {}
        self._lock = threading.Lock()

    def create(self, kind: str, message: str = "queued") -> RunRecord:
        run = RunRecord(id=str(uuid.uuid4()), kind=kind, message=message)
        with self._lock:
            self._runs[run.id] = run
        return run

    def update(self,
               run_id: str,
               status: str,
               message: str = "",
               result_path: Optional[str] = None) -> RunRecord:
        if status not in STATUSES:
            raise ValueError(f"unknown run status {status!r}")
        with self._lock:
            run = self._runs[run_id]
            run.status = status
            run.message = message
            run.updated_at = _now()
            if result_path:
                run.result_path = result_path
        return run

    def get(self, run_id: str) -> Optional[RunRecord]:
        return self._runs.get(run_id)

    def list_recent(self, limit: int = 20):
        recent = sorted(self._runs.values(),
                        key=lambda r: r.updated_at,
                        reverse=True)
        return [run.to_dict() for run in recent[:limit]]

    def summary(self):
        counts: Dict[str, int] = {}
        for run in self._runs.values():
            counts[run.status] = counts.get(run.status, 0) + 1
        return {
            "total": len(self._runs),
            "counts": counts,
            "runs": [r.to_dict() for r in self._runs.values()],
        }

    def write(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2))
        return path
