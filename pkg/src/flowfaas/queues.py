"""Engine task type and the queues shared by dispatcher and engines."""

from __future__ import annotations

import asyncio
import collections
import enum
import threading
from dataclasses import dataclass, field

from .data import FunctionSpec
from .memory import MemoryContext


class QueueClass(str, enum.Enum):
    COMPUTE = "compute"
    COMMUNICATION = "communication"


@dataclass(eq=False)
class EngineTask:
    invocation_id: str
    node_id: str
    instance: int
    spec: FunctionSpec
    context: MemoryContext
    queue: QueueClass
    enqueued_at: float = 0.0
    deadline: float = 0.0
    cold: bool = False
    stats: dict = field(default_factory=dict)
    sandbox: object = None             # warm-pool sandbox acquired at dispatch


@dataclass
class TaskResult:
    task: EngineTask
    outputs: list | None = None        # list[DataSet] on success
    failure: str | None = None         # diagnostic on failure

    @property
    def ok(self):
        return self.failure is None


class TaskQueue:
    """Multi-producer/multi-consumer FIFO usable from threads and event loops."""

    def __init__(self, name: str):
        self.name = name
        self._items: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._waiters: list[tuple[asyncio.AbstractEventLoop, asyncio.Event]] = []

    def __len__(self):
        return len(self._items)

    def put(self, task):
        with self._cond:
            self._items.append(task)
            self._cond.notify()
            waiters, self._waiters = self._waiters, []
        for loop, ev in waiters:
            try:
                loop.call_soon_threadsafe(ev.set)
            except RuntimeError:
                pass  # loop already closed

    def get(self, timeout: float | None = None):
        """Blocking pop; returns None on timeout."""
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            return self._items.popleft() if self._items else None

    def get_nowait(self):
        with self._cond:
            return self._items.popleft() if self._items else None

    async def get_async(self, timeout: float):
        loop = asyncio.get_running_loop()
        ev = asyncio.Event()
        with self._cond:
            if self._items:
                return self._items.popleft()
            self._waiters.append((loop, ev))
        try:
            await asyncio.wait_for(ev.wait(), timeout)
        except asyncio.TimeoutError:
            pass
        with self._cond:
            try:
                self._waiters.remove((loop, ev))
            except ValueError:
                pass
            return self._items.popleft() if self._items else None
