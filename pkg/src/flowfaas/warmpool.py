"""Keep-alive sandbox pool, the baseline that per-request isolation is compared to.

This is an emulation. A retained sandbox is charged its function's context
capacity plus a fixed overhead that stands in for the guest OS a real
warm-start platform keeps resident. Creating a sandbox costs an emulated
boot delay on the request's critical path; reusing an idle one costs
nothing.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import defaultdict
from dataclasses import dataclass

from .data import MiB
from .memory import MemoryGauge

DEFAULT_OVERHEAD = 8 * MiB
DEFAULT_BOOT_DELAY = 0.25
DEFAULT_KEEP_ALIVE = 600.0

_ids = itertools.count(1)


@dataclass(eq=False)
class Sandbox:
    function: str
    charge: int
    id: int = 0
    last_used: float = 0.0
    hot: bool = False


class WarmPool:
    def __init__(self, gauge: MemoryGauge, *, keep_alive: float = DEFAULT_KEEP_ALIVE,
                 pool_size: int = 1, overhead: int = DEFAULT_OVERHEAD,
                 boot_delay: float = DEFAULT_BOOT_DELAY, clock=time.monotonic, sleep=time.sleep):
        self.gauge = gauge
        self.keep_alive = keep_alive
        self.pool_size = pool_size
        self.overhead = overhead
        self.boot_delay = boot_delay
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._idle: dict[str, list[Sandbox]] = defaultdict(list)
        self._busy: dict[str, int] = defaultdict(int)
        self.watermark: dict[str, int] = defaultdict(int)
        self.cold_starts = 0
        self.hot_starts = 0

    def _new(self, spec) -> Sandbox:
        charge = spec.memory_capacity + self.overhead
        self.gauge.reserve(charge)
        return Sandbox(spec.name, charge, next(_ids))

    def acquire(self, spec, cold_hint: bool = False, *, wait: bool = True) -> Sandbox:
        """A sandbox for one execution of ``spec``; boots one if none is idle.

        With ``cold_hint`` idle sandboxes of the function are discarded first,
        forcing the cold path. With ``wait=False`` a new sandbox is returned
        without sleeping and the caller sits out :attr:`boot_delay` itself.
        """
        self.reap()
        with self._lock:
            idle = self._idle[spec.name]
            if cold_hint:
                for sb in idle:
                    self.gauge.release(sb.charge)
                idle.clear()
            box = idle.pop() if idle else None
            self._busy[spec.name] += 1
            busy = self._busy[spec.name]
            self.watermark[spec.name] = max(self.watermark[spec.name], busy)
        if box is not None:
            box.hot = True
            with self._lock:
                self.hot_starts += 1
            return box
        try:
            box = self._new(spec)
        except Exception:
            with self._lock:
                self._busy[spec.name] -= 1
            raise
        if wait:
            self._sleep(self.boot_delay)
        with self._lock:
            self.cold_starts += 1
        self._prespawn(spec)
        return box

    def _prespawn(self, spec):
        """Top the idle set up so idle + busy reaches the concurrency target."""
        while True:
            with self._lock:
                target = max(self.pool_size, self.watermark[spec.name])
                if len(self._idle[spec.name]) + self._busy[spec.name] >= target:
                    return
            try:
                box = self._new(spec)
            except Exception:
                return
            box.last_used = self._clock()
            with self._lock:
                self._idle[spec.name].append(box)

    def release(self, box: Sandbox):
        box.last_used = self._clock()
        with self._lock:
            self._busy[box.function] -= 1
            self._idle[box.function].append(box)

    def reap(self, now: float | None = None) -> int:
        """Evict sandboxes idle for longer than keep-alive; returns how many."""
        now = self._clock() if now is None else now
        evicted = 0
        with self._lock:
            for fn, idle in self._idle.items():
                keep = [b for b in idle if now - b.last_used < self.keep_alive]
                for b in idle:
                    if now - b.last_used >= self.keep_alive:
                        self.gauge.release(b.charge)
                        evicted += 1
                self._idle[fn] = keep
        return evicted

    def idle_count(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._idle.values())

    def drain(self):
        with self._lock:
            for idle in self._idle.values():
                for b in idle:
                    self.gauge.release(b.charge)
                idle.clear()
