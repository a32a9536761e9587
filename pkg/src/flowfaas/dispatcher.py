"""Composition orchestration.

Each invocation is driven by one coroutine on the dispatcher's event loop.
Engines report completions from their own threads; those are posted to the
owning coroutine's inbox, so an invocation's state is only ever touched by
its coroutine. Context preparation (allocation and input copying) runs on a
small worker pool and never on the loop itself.
"""

from __future__ import annotations

import asyncio
import concurrent.futures
import enum
import itertools
import logging
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import abi
from .data import DataItem, DataSet, Kind, error_item
from .errors import (AdmissionError, ContextOverflowError, FlowError, InvocationError,
                     MissingInputError)
from .events import EventLog
from .ir import SOURCE, CompositionIR, Distribution, flatten, topological_order
from .memory import (ItemRef, MemoryContext, MemoryGauge, SetSelection,
                     build_input_blob)
from .queues import EngineTask, QueueClass, TaskQueue, TaskResult

log = logging.getLogger(__name__)


# --- pure rules -----------------------------------------------------------

def partition(distribution: Distribution, items: Sequence[DataItem]) -> list[list[int]]:
    """Index groups one input set contributes to the instance product.

    An empty set still contributes one (empty) group so that an optional
    expanding set never suppresses the whole node.
    """
    dist = Distribution(distribution)
    if dist is Distribution.ALL or not items:
        return [list(range(len(items)))]
    if dist is Distribution.EACH:
        return [[i] for i in range(len(items))]
    groups: dict[bytes, list[int]] = {}
    for i, item in enumerate(items):
        groups.setdefault(bytes(item.key), []).append(i)
    return [groups[k] for k in sorted(groups)]


def expand_indices(bindings: Sequence[tuple[str, Distribution, Sequence[DataItem]]]
                   ) -> list[dict[str, list[int]]]:
    """Per-instance item indices for each input set (Cartesian product of
    the sets' groups, in declaration order)."""
    names = [name for name, _, _ in bindings]
    groups = [partition(dist, items) for _, dist, items in bindings]
    return [dict(zip(names, combo)) for combo in itertools.product(*groups)]


def expand_instances(distributions: Mapping[str, Distribution],
                     inputs: Mapping[str, DataSet]) -> list[dict[str, DataSet]]:
    """Split available input sets into per-instance input sets.

    ``all`` hands the whole set to every instance, ``each`` makes one
    instance per item and ``key`` one instance per distinct key (ascending
    byte order). Several expanding sets combine by Cartesian product; with
    no expanding set there is exactly one instance.
    """
    bindings = [(name, distributions[name], inputs[name].items) for name in distributions]
    out = []
    for combo in expand_indices(bindings):
        out.append({name: DataSet(name, [inputs[name].items[i] for i in idx])
                    for name, idx in combo.items()})
    return out


def evaluate_skip(inputs: Sequence[tuple[str, bool, int]]) -> str:
    """``"skip"`` iff some non-optional input set is empty, else ``"run"``.

    ``inputs`` holds ``(set name, optional, item count)`` triples.
    """
    for _, optional, count in inputs:
        if not optional and count == 0:
            return "skip"
    return "run"


# --- invocation state -----------------------------------------------------

class NodeStatus(str, enum.Enum):
    WAITING = "waiting"
    EXPANDED = "expanded"
    DONE = "done"
    SKIPPED = "skipped"


@dataclass
class ProducedSet:
    refs: list[ItemRef] = field(default_factory=list)
    keys: list[bytes] = field(default_factory=list)

    def descriptors(self) -> list[DataItem]:
        """Items without payloads; enough for distribution decisions."""
        return [DataItem(r.name, k) for r, k in zip(self.refs, self.keys)]

    def __len__(self):
        return len(self.refs)


@dataclass
class InvocationResult:
    invocation_id: str
    sets: list[DataSet]
    timing: dict

    def set(self, name) -> DataSet:
        for s in self.sets:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(eq=False)
class Invocation:
    id: str
    composition: str
    ir: CompositionIR
    cold: bool
    future: concurrent.futures.Future
    inbox: asyncio.Queue | None = None
    status: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    results: dict = field(default_factory=lambda: defaultdict(dict))
    produced: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)
    node_pending: dict = field(default_factory=lambda: defaultdict(int))
    node_contexts: dict = field(default_factory=lambda: defaultdict(list))
    outstanding: int = 0
    failure: dict | None = None
    started: float = 0.0
    stage_totals: dict = field(default_factory=lambda: defaultdict(float))
    tasks: int = 0


class Dispatcher:
    def __init__(self, registry, gauge: MemoryGauge, queues: Mapping[QueueClass, TaskQueue],
                 events: EventLog | None = None, *, workers: int = 2,
                 account_compute_contexts: bool = True, warm_pool=None):
        self.registry = registry
        self.warm_pool = warm_pool
        self.gauge = gauge
        self.queues = queues
        self.events = events or EventLog()
        self.account_compute_contexts = account_compute_contexts
        self._pool = concurrent.futures.ThreadPoolExecutor(workers, thread_name_prefix="prep")
        self._ids = itertools.count(1)
        self._invocations: dict[str, Invocation] = {}
        self._flat_cache: dict[int, CompositionIR] = {}
        self.loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self.completed_latencies: deque = deque(maxlen=100_000)

    # -- lifecycle ----------------------------------------------------------

    def start(self, loop: asyncio.AbstractEventLoop | None = None):
        if loop is not None:
            self.loop = loop
            return self
        ready = threading.Event()

        def run():
            self.loop = asyncio.new_event_loop()
            asyncio.set_event_loop(self.loop)
            ready.set()
            self.loop.run_forever()

        self._thread = threading.Thread(target=run, name="dispatcher", daemon=True)
        self._thread.start()
        ready.wait()
        return self

    def stop(self):
        if self._thread is not None and self.loop is not None:
            self.loop.call_soon_threadsafe(self.loop.stop)
            self._thread.join(5)
            self._thread = None
        self._pool.shutdown(wait=False)

    # -- public API -----------------------------------------------------------

    def invoke(self, composition: str, inputs: Sequence[DataSet], *, cold: bool = False) -> str:
        """Start an invocation; returns its id immediately."""
        inv = self._create(composition, inputs, cold)
        self.loop.call_soon_threadsafe(self._spawn, inv, list(inputs))
        return inv.id

    async def invoke_async(self, composition: str, inputs: Sequence[DataSet], *,
                           cold: bool = False) -> InvocationResult:
        """Loop-side entry used by the HTTP frontend."""
        inv = self._create(composition, inputs, cold)
        self._spawn(inv, list(inputs))
        try:
            return await asyncio.wrap_future(inv.future)
        finally:
            self._invocations.pop(inv.id, None)

    def await_result(self, invocation_id: str, timeout: float | None = None) -> InvocationResult:
        inv = self._invocations[invocation_id]
        try:
            return inv.future.result(timeout)
        except concurrent.futures.TimeoutError:
            raise TimeoutError(f"invocation {invocation_id} still running") from None
        finally:
            if inv.future.done():
                self._invocations.pop(invocation_id, None)

    def run(self, composition: str, inputs: Sequence[DataSet], *, cold: bool = False,
            timeout: float | None = 60.0) -> InvocationResult:
        return self.await_result(self.invoke(composition, inputs, cold=cold), timeout)

    def deliver(self, result: TaskResult):
        """Engine-side completion hook (any thread)."""
        inv = self._invocations.get(result.task.invocation_id)
        if inv is None or inv.inbox is None:
            log.error("completion for unknown invocation %s", result.task.invocation_id)
            return
        self.loop.call_soon_threadsafe(inv.inbox.put_nowait, result)

    def in_flight(self) -> int:
        return sum(1 for inv in self._invocations.values() if not inv.future.done())

    # -- orchestration ------------------------------------------------------

    def _flat(self, ir: CompositionIR) -> CompositionIR:
        key = id(ir)
        flat = self._flat_cache.get(key)
        if flat is None or flat.name != ir.name:
            flat = flatten(ir, self.registry.composition)
            self._flat_cache[key] = flat
        return flat

    def _create(self, composition, inputs, cold) -> Invocation:
        ir = self._flat(self.registry.composition(composition))
        given = {s.name for s in inputs}
        for name in ir.source_sets:
            if name not in given:
                raise MissingInputError(name)
        inv = Invocation(id=f"inv{next(self._ids)}", composition=composition, ir=ir,
                         cold=cold, future=concurrent.futures.Future())
        self._invocations[inv.id] = inv
        return inv

    def _spawn(self, inv: Invocation, inputs):
        inv.inbox = asyncio.Queue()
        self.loop.create_task(self._orchestrate(inv, inputs))

    def _emit(self, event, inv, **kw):
        self.events.emit(event, inv=inv.id, **kw)

    async def _orchestrate(self, inv: Invocation, inputs: list[DataSet]):
        inv.started = time.monotonic()
        self._emit("invoke", inv, composition=inv.composition, cold=inv.cold)
        try:
            order = topological_order(inv.ir)
            inv.status = {nid: NodeStatus.WAITING for nid in order}
            self._load_sources(inv, inputs)
            await self._advance(inv, order)
            while inv.outstanding or (inv.failure is None and not self._all_settled(inv)):
                if not inv.outstanding:
                    raise FlowError("no runnable node left but composition unsettled")
                result = await inv.inbox.get()
                self._on_task_complete(inv, result)
                if inv.failure is None:
                    await self._advance(inv, order)
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("invocation %s crashed", inv.id)
            inv.failure = inv.failure or {"reason": f"internal error: {exc}"}
        self._finish(inv)

    def _all_settled(self, inv):
        return all(s in (NodeStatus.DONE, NodeStatus.SKIPPED) for s in inv.status.values())

    def _load_sources(self, inv: Invocation, inputs: list[DataSet]):
        t0 = time.perf_counter()
        by_name = {s.name: s for s in inputs}
        sets = [DataSet(n, by_name[n].items) for n in inv.ir.source_sets]
        for s in sets:
            s.check_unique()
        ctx = MemoryContext(max(abi.encoded_size(sets), 1), self.gauge, label=f"{inv.id}:input")
        layout = ctx.write_sets(sets)
        inv.node_contexts[SOURCE].append(ctx)
        for sl in layout.sets:
            self._publish(inv, SOURCE, sl.name,
                          ProducedSet([ItemRef(ctx, it) for it in sl.items],
                                      [ctx.read(it.key_offset, it.key_len) for it in sl.items]))
        inv.stage_totals["marshal"] += time.perf_counter() - t0
        self._maybe_release(inv, SOURCE)

    def _consumers(self, inv, producer, pset) -> int:
        n = len(inv.ir.out_edges(producer, pset))
        n += sum(1 for p, s in inv.ir.sinks.values() if (p, s) == (producer, pset))
        return n

    def _publish(self, inv, producer, pset, produced: ProducedSet):
        inv.produced[(producer, pset)] = produced
        n = self._consumers(inv, producer, pset)
        inv.pending[(producer, pset)] = n
        inv.node_pending[producer] += n

    def _consume(self, inv, producer, pset):
        inv.pending[(producer, pset)] -= 1
        inv.node_pending[producer] -= 1
        self._maybe_release(inv, producer)

    def _maybe_release(self, inv, producer):
        if inv.node_pending[producer] == 0:
            for ctx in inv.node_contexts.pop(producer, []):
                self._release(inv, ctx, producer)

    def _release(self, inv, ctx, node):
        ctx.release()
        self._emit("release", inv, node=node, ctx=ctx.id, capacity=ctx.capacity)

    def _ready(self, inv, node_id) -> bool:
        if inv.status[node_id] is not NodeStatus.WAITING:
            return False
        for e in inv.ir.in_edges(node_id):
            if e.producer != SOURCE and inv.status[e.producer] not in (
                    NodeStatus.DONE, NodeStatus.SKIPPED):
                return False
        return True

    async def _advance(self, inv: Invocation, order):
        """Expand or skip every node whose producers have all settled."""
        jobs = []
        consumed = []
        progress = True
        while progress and inv.failure is None:
            progress = False
            for nid in order:
                if not self._ready(inv, nid):
                    continue
                progress = True
                node = inv.ir.node(nid)
                edges = {e.consumer_set: e for e in inv.ir.in_edges(nid)}
                available = {}
                for name, optional in node.inputs:
                    e = edges.get(name)
                    available[name] = (inv.produced[(e.producer, e.producer_set)]
                                       if e else ProducedSet())
                optional_of = {name: opt or (edges[name].optional if name in edges else True)
                               for name, opt in node.inputs}
                decision = evaluate_skip([(n, optional_of[n], len(available[n]))
                                          for n, _ in node.inputs])
                if decision == "skip":
                    inv.status[nid] = NodeStatus.SKIPPED
                    self._emit("skip", inv, node=nid)
                    for out in node.outputs:
                        self._publish(inv, nid, out, ProducedSet())
                    for e in edges.values():
                        self._consume(inv, e.producer, e.producer_set)
                    self._maybe_release(inv, nid)
                    continue
                bindings = [(name, edges[name].distribution if name in edges
                             else Distribution.ALL, available[name].descriptors())
                            for name, _ in node.inputs]
                instances = expand_indices(bindings)
                inv.status[nid] = NodeStatus.EXPANDED
                inv.expected[nid] = len(instances)
                self._emit("expand", inv, node=nid, instances=len(instances))
                spec = self.registry.spec(node.function)
                for idx, combo in enumerate(instances):
                    selections = [SetSelection(name, [available[name].refs[i] for i in combo[name]])
                                  for name, _ in node.inputs]
                    inv.outstanding += 1
                    jobs.append(self.loop.run_in_executor(
                        self._pool, self._prepare, inv, nid, idx, spec, selections))
                consumed.extend((e.producer, e.producer_set) for e in edges.values())
        if jobs:
            failures = await asyncio.gather(*jobs)
            for failure in failures:
                if failure is not None:
                    inv.inbox.put_nowait(failure)
        for producer, pset in consumed:
            self._consume(inv, producer, pset)

    def _prepare(self, inv: Invocation, nid, idx, spec, selections):
        """Worker-pool job: allocate the instance context, copy inputs, enqueue."""
        t0 = time.perf_counter()
        queue = (QueueClass.COMMUNICATION if spec.kind is Kind.COMMUNICATION
                 else QueueClass.COMPUTE)
        task = EngineTask(inv.id, nid, idx, spec, None, queue, cold=inv.cold)
        accounted = self.account_compute_contexts or queue is QueueClass.COMMUNICATION
        try:
            task.context = MemoryContext(spec.memory_capacity, self.gauge,
                                         label=f"{inv.id}:{nid}#{idx}", accounted=accounted)
        except AdmissionError as exc:
            return TaskResult(task, failure=f"admission: {exc}")
        try:
            build_input_blob(task.context, selections)
        except ContextOverflowError as exc:
            return TaskResult(task, failure=f"input {exc}")
        task.stats["transfer"] = time.perf_counter() - t0
        if self.warm_pool is not None and queue is QueueClass.COMPUTE:
            try:
                task.sandbox = self.warm_pool.acquire(spec, task.cold, wait=False)
            except AdmissionError as exc:
                return TaskResult(task, failure=f"admission: {exc}")
            if not task.sandbox.hot:
                # the emulated boot delays this request only, not an engine
                task.stats["boot"] = self.warm_pool.boot_delay
                self.loop.call_soon_threadsafe(self.loop.call_later, self.warm_pool.boot_delay,
                                               self._enqueue, inv, task)
                return None
        self._enqueue(inv, task)
        return None

    def _enqueue(self, inv: Invocation, task: EngineTask):
        now = time.monotonic()
        task.enqueued_at = now
        task.deadline = now + task.spec.timeout
        self._emit("enqueue", inv, node=task.node_id, instance=task.instance,
                   queue=task.queue.value, function=task.spec.name)
        self.queues[task.queue].put(task)

    def _on_task_complete(self, inv: Invocation, result: TaskResult):
        task = result.task
        inv.outstanding -= 1
        inv.tasks += 1
        for k, v in task.stats.items():
            if isinstance(v, float):
                inv.stage_totals[k] += v
        nid = task.node_id
        node = inv.ir.node(nid)
        ctx = task.context
        if result.ok:
            layout = ctx.layout
        else:
            if ctx is not None and ctx.state.value != "released":
                self._release(inv, ctx, nid)
            if inv.failure is not None:
                return
            if not node.outputs:
                inv.failure = {"reason": f"{nid} failed: {result.failure}",
                               "node": nid, "instance": task.instance,
                               "diagnostic": result.failure}
                return
            sets = [DataSet(node.outputs[0], [error_item(result.failure)])]
            sets += [DataSet(o) for o in node.outputs[1:]]
            ctx = MemoryContext(abi.encoded_size(sets), self.gauge, label=f"{inv.id}:{nid}:error")
            layout = ctx.write_sets(sets)
        if inv.failure is not None:
            self._release(inv, ctx, nid)
            return
        inv.results[nid][task.instance] = (ctx, layout)
        inv.node_contexts[nid].append(ctx)
        if len(inv.results[nid]) < inv.expected[nid]:
            return
        # every instance reported: pool outputs in instance order
        per_instance = [inv.results[nid][i] for i in range(inv.expected[nid])]
        for out in node.outputs:
            produced = ProducedSet()
            seen = set()
            for idx, (c, lay) in enumerate(per_instance):
                try:
                    items = lay.set(out).items
                except KeyError:
                    continue
                for it in items:
                    ident = it.ident
                    if ident in seen:
                        ident = f"{it.ident}#{idx}"
                        n = 1
                        while ident in seen:
                            ident = f"{it.ident}#{idx}.{n}"
                            n += 1
                    seen.add(ident)
                    produced.refs.append(ItemRef(c, it, None if ident == it.ident else ident))
                    produced.keys.append(c.read(it.key_offset, it.key_len))
            self._publish(inv, nid, out, produced)
        inv.status[nid] = NodeStatus.DONE
        del inv.results[nid]
        self._maybe_release(inv, nid)

    def _finish(self, inv: Invocation):
        sets = []
        if inv.failure is None:
            for name, (p, s) in inv.ir.sinks.items():
                produced = inv.produced.get((p, s), ProducedSet())
                sets.append(DataSet(name, [
                    DataItem(r.name, k, r.ctx.read(r.item.data_offset, r.item.data_len))
                    for r, k in zip(produced.refs, produced.keys)]))
                if (p, s) in inv.pending:
                    self._consume(inv, p, s)
        # anything still held (failure paths) is released now
        for node, ctxs in list(inv.node_contexts.items()):
            for ctx in ctxs:
                if ctx.state.value != "released":
                    self._release(inv, ctx, node)
        inv.node_contexts.clear()
        # an entry may outlive its result (invoke() without await_result)
        inv.produced.clear()
        inv.results.clear()
        elapsed = time.monotonic() - inv.started
        timing = {"total": elapsed, "tasks": inv.tasks, **dict(inv.stage_totals)}
        self._emit("finish", inv, status="error" if inv.failure else "ok", elapsed=elapsed)
        self.completed_latencies.append(elapsed)
        if inv.failure is not None:
            report = dict(inv.failure, invocation=inv.id, timing=timing)
            inv.future.set_exception(InvocationError(report))
        else:
            inv.future.set_result(InvocationResult(inv.id, sets, timing))


__all__ = ["Dispatcher", "InvocationResult", "expand_instances", "expand_indices",
           "evaluate_skip", "partition", "NodeStatus", "FlowError"]
