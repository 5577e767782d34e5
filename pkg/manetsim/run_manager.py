"""
Run Manager - state tracking for the points of a sweep.

Single source of truth for sweep progress; persisted so an interrupted
sweep leaves a readable record of what finished and what failed.
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Callable

from .models import PointRun, PointStatus, RunResult, SweepSummary
from .utils.logger import get_logger

logger = get_logger("run_manager")

STATE_FILE = "sweep-state.json"


def point_id(key: tuple) -> str:
    return "-".join(str(part) for part in key)


class RunManager:
    """
    Tracks every sweep point through pending, running, completed and failed.

    State is written to ``sweep-state.json`` in the state directory after
    each transition when a directory is configured.
    """

    def __init__(self, state_dir: Path | None = None, sweep_id: str | None = None):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.sweep_id = sweep_id or f"sweep-{int(datetime.now().timestamp() * 1000)}"
        self._points: dict[str, PointRun] = {}
        self._listeners: list[Callable[[dict], None]] = []
        self.status = "idle"
        self.started_at: datetime | None = None
        self.completed_at: datetime | None = None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)

    def persist_state(self) -> None:
        if self.state_dir is None:
            return
        state = {
            "sweepId": self.sweep_id,
            "status": self.status,
            "startedAt": self.started_at.isoformat() if self.started_at else None,
            "completedAt": self.completed_at.isoformat() if self.completed_at else None,
            "points": [p.to_dict() for p in self._points.values()],
            "summary": self.get_summary().to_dict(),
        }
        (self.state_dir / STATE_FILE).write_text(json.dumps(state, indent=2))

    def create_point(self, key: tuple) -> PointRun:
        point = PointRun(point_id(key), key)
        self._points[point.id] = point
        self._emit("point:created", {"point": point.id})
        return point

    def mark_running(self, point: PointRun) -> None:
        point.set_status(PointStatus.RUNNING)
        self._emit("point:running", {"point": point.id})

    def mark_completed(self, point: PointRun, result: RunResult) -> None:
        point.result = result
        point.set_status(PointStatus.COMPLETED)
        self._emit("point:completed", {"point": point.id})
        self.persist_state()

    def mark_failed(self, point: PointRun, error: str) -> None:
        point.set_status(PointStatus.FAILED, error)
        logger.warning(f"Sweep point failed: {point.id} - {error}")
        self._emit("point:failed", {"point": point.id, "error": error})
        self.persist_state()

    def get_failed_points(self) -> list[PointRun]:
        return [p for p in self._points.values() if p.status is PointStatus.FAILED]

    def get_completed_points(self) -> list[PointRun]:
        return [p for p in self._points.values() if p.status is PointStatus.COMPLETED]

    def start(self) -> None:
        self.status = "running"
        self.started_at = datetime.now()
        self._emit("sweep:start", {"sweepId": self.sweep_id})
        self.persist_state()
        logger.info(f"Sweep started: {self.sweep_id}", extra={"points": len(self._points)})

    def complete(self) -> None:
        self.status = "completed"
        self.completed_at = datetime.now()
        summary = self.get_summary()
        self._emit("sweep:complete", {"sweepId": self.sweep_id, "summary": summary.to_dict()})
        self.persist_state()
        logger.info(
            f"Sweep completed: {summary.completed}/{summary.total} points, {summary.failed} failed",
        )

    def get_summary(self) -> SweepSummary:
        points = list(self._points.values())
        return SweepSummary(
            total=len(points),
            completed=sum(1 for p in points if p.status is PointStatus.COMPLETED),
            failed=sum(1 for p in points if p.status is PointStatus.FAILED),
            pending=sum(1 for p in points if p.status in (PointStatus.PENDING, PointStatus.RUNNING)),
        )

    def subscribe(self, listener: Callable[[dict], None]) -> Callable[[], None]:
        """Subscribe to manager events. Returns unsubscribe function."""
        self._listeners.append(listener)
        return lambda: self._listeners.remove(listener)

    def _emit(self, event: str, data: dict) -> None:
        for listener in self._listeners:
            try:
                listener({"event": event, **data})
            except Exception as e:
                logger.warning(f"Listener error: {e}")
