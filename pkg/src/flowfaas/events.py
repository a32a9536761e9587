"""Structured JSON-lines event log."""

from __future__ import annotations

import json
import threading
import time
from typing import IO

EVENTS = ("invoke", "expand", "enqueue", "start", "complete", "skip", "release", "finish")


class EventLog:
    """Thread-safe append-only log; optionally mirrored to a file.

    Every record carries ``ts`` (seconds, monotonic clock) and ``event``.
    """

    def __init__(self, path: str | None = None, keep: bool = True):
        self._lock = threading.Lock()
        self._records: list[dict] = []
        self._keep = keep
        self._fh: IO[str] | None = open(path, "a", buffering=1) if path else None

    def emit(self, event: str, **fields):
        rec = {"ts": time.monotonic(), "event": event, **fields}
        with self._lock:
            if self._keep:
                self._records.append(rec)
            if self._fh is not None:
                self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        return rec

    def records(self, event: str | None = None, **match) -> list[dict]:
        with self._lock:
            recs = list(self._records)
        return [r for r in recs if (event is None or r["event"] == event)
                and all(r.get(k) == v for k, v in match.items())]

    def clear(self):
        with self._lock:
            self._records.clear()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
