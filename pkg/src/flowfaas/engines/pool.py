"""Engine threads standing in for cores, and their role assignment."""

from __future__ import annotations

import asyncio
import logging
import os
import threading
import time

from ..events import EventLog
from ..queues import QueueClass, TaskQueue, TaskResult

log = logging.getLogger(__name__)

POLL = 0.02

COMPUTE = QueueClass.COMPUTE
COMM = QueueClass.COMMUNICATION


def _pin(cpu: int | None):
    if cpu is None or not hasattr(os, "sched_setaffinity"):
        return
    try:
        os.sched_setaffinity(threading.get_native_id(), {cpu})
    except OSError as exc:
        log.debug("pinning to cpu %d failed: %s", cpu, exc)


class Engine(threading.Thread):
    """One scheduling unit. A compute engine runs one task at a time to
    completion; a communication engine multiplexes many tasks on its own
    event loop. Role changes take effect only between tasks (compute) or
    after draining in-flight work (communication)."""

    def __init__(self, pool: "EnginePool", index: int, role: QueueClass, cpu: int | None):
        super().__init__(name=f"engine-{index}", daemon=True)
        self.pool = pool
        self.index = index
        self.role = role
        self.target_role = role
        self.cpu = cpu
        self.busy = 0
        self.completed = 0

    def run(self):
        _pin(self.cpu)
        while not self.pool.stopping.is_set():
            if self.target_role is not self.role:
                old, self.role = self.role, self.target_role
                self.pool.events.emit("reassign", engine=self.index, role=self.role.value,
                                      previous=old.value, phase="done")
            if self.role is COMPUTE:
                self._compute_step()
            else:
                asyncio.run(self._comm_session())

    def _compute_step(self):
        task = self.pool.queues[COMPUTE].get(POLL)
        if task is None:
            return
        ev = self.pool.events
        self.busy = 1
        ev.emit("start", inv=task.invocation_id, node=task.node_id, instance=task.instance,
                engine=self.index, queue=COMPUTE.value)
        try:
            result = self.pool.compute_runner.run(task, self.cpu)
        except Exception as exc:  # noqa: BLE001 - engine must survive
            log.exception("compute task crashed")
            result = TaskResult(task, failure=f"engine error: {exc}")
        self.busy = 0
        self.completed += 1
        ev.emit("complete", inv=task.invocation_id, node=task.node_id, instance=task.instance,
                engine=self.index, queue=COMPUTE.value, ok=result.ok)
        self.pool.on_complete(result)

    async def _comm_session(self):
        runner = self.pool.comm_runner
        queue = self.pool.queues[COMM]
        inflight: set[asyncio.Task] = set()

        async def one(task):
            try:
                result = await runner.run(task)
            except Exception as exc:  # noqa: BLE001
                log.exception("communication task crashed")
                result = TaskResult(task, failure=f"engine error: {exc}")
            self.completed += 1
            self.pool.events.emit("complete", inv=task.invocation_id, node=task.node_id,
                                  instance=task.instance, engine=self.index,
                                  queue=COMM.value, ok=result.ok)
            self.pool.on_complete(result)

        while not self.pool.stopping.is_set() and self.target_role is COMM:
            if len(inflight) >= runner.max_in_flight:
                await asyncio.wait(inflight, return_when=asyncio.FIRST_COMPLETED)
                continue
            task = await queue.get_async(POLL)
            if task is None:
                continue
            self.pool.events.emit("start", inv=task.invocation_id, node=task.node_id,
                                  instance=task.instance, engine=self.index, queue=COMM.value)
            t = asyncio.get_running_loop().create_task(one(task))
            inflight.add(t)
            t.add_done_callback(inflight.discard)
            self.busy = len(inflight)
        if inflight:
            await asyncio.gather(*inflight)
        self.busy = 0


class EnginePool:
    def __init__(self, n_compute: int, n_comm: int, queues: dict[QueueClass, TaskQueue],
                 compute_runner, comm_runner, on_complete, events: EventLog | None = None,
                 *, pin: bool = False):
        if n_compute < 1 or n_comm < 1:
            raise ValueError("need at least one engine of each type")
        self.queues = queues
        self.compute_runner = compute_runner
        self.comm_runner = comm_runner
        self.on_complete = on_complete
        self.events = events or EventLog()
        self.stopping = threading.Event()
        self._lock = threading.Lock()
        ncpu = os.cpu_count() or 1
        roles = [COMPUTE] * n_compute + [COMM] * n_comm
        self.engines = [Engine(self, i, r, (i % ncpu) if pin else None)
                        for i, r in enumerate(roles)]

    def start(self):
        for e in self.engines:
            e.start()
        return self

    def stop(self, timeout: float = 5.0):
        self.stopping.set()
        deadline = time.monotonic() + timeout
        for e in self.engines:
            e.join(max(0.0, deadline - time.monotonic()))

    @property
    def total(self):
        return len(self.engines)

    def assignment(self) -> tuple[int, int]:
        """Logical (n_compute, n_comm): the roles engines are assigned to."""
        n = sum(1 for e in self.engines if e.target_role is COMPUTE)
        return n, self.total - n

    def physical(self) -> tuple[int, int]:
        """Roles engines are currently running in."""
        n = sum(1 for e in self.engines if e.role is COMPUTE)
        return n, self.total - n

    def reassign(self, to: QueueClass):
        """Move one core to role ``to``; returns the engine chosen or None.

        A donor still switching the other way is simply turned back, so an
        engine is never counted in both roles.
        """
        src = COMM if to is COMPUTE else COMPUTE
        with self._lock:
            candidates = [e for e in self.engines if e.target_role is src]
            if len(candidates) <= 1:
                return None
            pending = [e for e in candidates if e.role is to]
            if pending:
                engine = pending[0]
            else:
                engine = min(candidates, key=lambda e: (e.busy, -e.index))
            engine.target_role = to
        self.events.emit("reassign", engine=engine.index, role=to.value,
                         previous=src.value, phase="requested")
        return engine
