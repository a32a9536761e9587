"""Compute task execution: one fresh sandbox per request, run to completion."""

from __future__ import annotations

import logging
import os
import signal
import subprocess
import threading
import time
from dataclasses import dataclass

from .. import abi, sandbox
from ..data import Backend, DataItem, DataSet, MiB
from ..errors import AbiError, AdmissionError, ContextOverflowError
from ..queues import EngineTask, TaskResult
from .loader import BinaryCache

log = logging.getLogger(__name__)

STDERR_LIMIT = 4096


@dataclass
class ExecOutcome:
    output: bytes | None
    failure: str | None = None


def _truncate(err: bytes) -> str:
    text = err[:STDERR_LIMIT].decode("utf-8", "replace").strip()
    return text + (" [truncated]" if len(err) > STDERR_LIMIT else "")


def _with_stderr(msg: str, err: bytes) -> str:
    return f"{msg}; stderr: {_truncate(err)}" if err.strip() else msg


def address_space_limit(capacity: int) -> int:
    """RLIMIT_AS for a child: room for its input, its output and the runtime."""
    return 2 * capacity + 32 * MiB


def subprocess_execute(path, blob: bytes, *, timeout: float, capacity: int,
                       cpu: int | None = None, launcher=None) -> ExecOutcome:
    """Run ``path`` in a fresh process, blob on stdin, ABI stream on stdout."""
    if launcher is not None:
        argv = [str(launcher), str(address_space_limit(capacity)),
                str(-1 if cpu is None else cpu), str(path)]
    else:
        argv = [str(path)]
    for attempt in (0, 1):
        try:
            proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    stderr=subprocess.PIPE, start_new_session=True,
                                    env={}, close_fds=True)
            break
        except OSError as exc:
            if attempt:
                return ExecOutcome(None, f"spawn failed: {exc}")
            log.warning("spawn failed, retrying: %s", exc)
    try:
        out, err = proc.communicate(blob, timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.communicate()
        return ExecOutcome(None, "timeout")
    rc = proc.returncode
    if rc == -signal.SIGSYS:
        return ExecOutcome(None, _with_stderr("syscall forbidden", err))
    if rc < 0:
        return ExecOutcome(None, _with_stderr(f"killed by {signal.Signals(-rc).name}", err))
    if rc != 0:
        return ExecOutcome(None, _with_stderr(f"exit status {rc}", err))
    return ExecOutcome(out)


def inprocess_execute(fn, inputs: dict, *, timeout: float):
    """Call a trusted callable on a watchdog thread.

    Returns ``(outputs, failure)``. A worker that overruns its timeout is
    abandoned and its eventual result discarded.
    """
    box = {}

    def target():
        try:
            box["out"] = fn(inputs)
        except BaseException as exc:  # noqa: BLE001 - reported as task failure
            box["err"] = exc

    worker = threading.Thread(target=target, name="inproc", daemon=True)
    worker.start()
    worker.join(timeout)
    if worker.is_alive():
        return None, "timeout"
    if "err" in box:
        exc = box["err"]
        return None, f"exception: {type(exc).__name__}: {exc}"
    return box.get("out"), None


def normalize_outputs(spec, produced) -> list[DataSet]:
    """Declared-order output sets; undeclared or malformed output is an ABI violation."""
    if isinstance(produced, dict):
        by_name = {name: DataSet(name, items) for name, items in produced.items()}
    else:
        by_name = {}
        for s in produced or ():
            if s.name in by_name:
                raise AbiError(f"set {s.name!r} emitted twice")
            by_name[s.name] = s
    extra = set(by_name) - set(spec.output_sets)
    if extra:
        raise AbiError(f"undeclared output set(s) {sorted(extra)}")
    sets = [by_name.get(name, DataSet(name)) for name in spec.output_sets]
    for s in sets:
        for item in s.items:
            if not isinstance(item, DataItem):
                raise AbiError(f"set {s.name!r} holds a non-item {type(item).__name__}")
        try:
            s.check_unique()
        except ValueError as exc:
            raise AbiError(str(exc)) from None
    return sets


class ComputeRunner:
    """Executes compute tasks; engines call :meth:`run` from their own thread."""

    def __init__(self, cache: BinaryCache, *, warm_pool=None, use_launcher: bool = True):
        self.cache = cache
        self.warm_pool = warm_pool
        self.launcher = sandbox.launcher() if use_launcher else None

    @property
    def syscall_blocking(self) -> str:
        return sandbox.ENFORCED if self.launcher is not None else sandbox.NONE

    def run(self, task: EngineTask, cpu: int | None = None) -> TaskResult:
        spec = task.spec
        stats = task.stats
        t_start = time.monotonic()
        stats["queue_wait"] = max(0.0, t_start - task.enqueued_at) if task.enqueued_at else 0.0
        box = task.sandbox
        if box is None and self.warm_pool is not None:
            try:
                box = self.warm_pool.acquire(spec, task.cold)
            except AdmissionError as exc:
                return TaskResult(task, failure=f"admission: {exc}")
        if box is not None:
            stats["sandbox"] = "hot" if box.hot else "cold"
        else:
            stats["sandbox"] = "fresh"
            if task.cold:
                self.cache.drop(spec.code_ref)
        try:
            return self._run(task, cpu)
        finally:
            if box is not None:
                self.warm_pool.release(box)
            stats["engine_total"] = time.monotonic() - t_start

    def _run(self, task, cpu):
        spec = task.spec
        stats = task.stats
        ctx = task.context
        inproc = spec.backend is Backend.INPROCESS
        t0 = time.perf_counter()
        try:
            loaded = self.cache.load(spec.code_ref, executable=not inproc)
        except Exception as exc:  # noqa: BLE001
            return TaskResult(task, failure=f"load failed: {exc}")
        t1 = time.perf_counter()
        stats["load"] = t1 - t0
        stats["load_source"] = loaded.source
        if inproc:
            inputs = {s.name: s for s in ctx.read_sets()}
            t2 = time.perf_counter()
            stats["setup"] = t2 - t0
            produced, failure = inprocess_execute(loaded.target, inputs, timeout=spec.timeout)
            t3 = time.perf_counter()
            stats["execute"] = t3 - t2
            if failure:
                return TaskResult(task, failure=failure)
            try:
                sets = normalize_outputs(spec, produced)
            except AbiError as exc:
                return TaskResult(task, failure=f"abi-violation: {exc}")
        else:
            blob = ctx.blob()
            t2 = time.perf_counter()
            stats["setup"] = t2 - t0
            outcome = subprocess_execute(loaded.path, blob, timeout=spec.timeout,
                                         capacity=spec.memory_capacity, cpu=cpu,
                                         launcher=self.launcher)
            t3 = time.perf_counter()
            stats["execute"] = t3 - t2
            if outcome.failure:
                return TaskResult(task, failure=outcome.failure)
            try:
                sets = normalize_outputs(spec, abi.decode(outcome.output))
            except AbiError as exc:
                return TaskResult(task, failure=f"abi-violation: {exc}")
        # outputs replace the inputs in the instance's context
        try:
            ctx.reset()
            ctx.write_sets(sets)
        except ContextOverflowError as exc:
            return TaskResult(task, failure=f"output {exc}")
        stats["output"] = time.perf_counter() - t3
        return TaskResult(task, outputs=sets)
