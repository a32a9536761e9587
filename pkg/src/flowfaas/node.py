"""A single worker node: registry, dispatcher, engines, controller.

``flowfaas-node`` runs one with the HTTP frontend attached.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsl
from .controller import ControllerConfig, ControllerLoop
from .data import Backend, DataSet, FunctionSpec, InputDecl, Kind, MiB
from .dispatcher import Dispatcher, InvocationResult
from .engines.comm import CommRunner
from .engines.compute import ComputeRunner
from .engines.loader import BinaryCache
from .engines.pool import EnginePool
from .events import EventLog
from .memory import MemoryGauge
from .queues import QueueClass, TaskQueue, TaskResult
from .registry import FunctionRegistry
from .warmpool import DEFAULT_BOOT_DELAY, DEFAULT_KEEP_ALIVE, DEFAULT_OVERHEAD, WarmPool

log = logging.getLogger(__name__)

PER_REQUEST = "per-request"
WARM_POOL = "warm-pool"

HTTP_FUNCTION = "HTTP"


def http_spec() -> FunctionSpec:
    return FunctionSpec(HTTP_FUNCTION, kind=Kind.COMMUNICATION,
                        input_sets=[InputDecl("Request")], output_sets=["Response"],
                        memory_capacity=16 * MiB, timeout=30.0, backend=Backend.INPROCESS)


@dataclass
class NodeConfig:
    cores_compute: int = 2
    cores_comm: int = 1
    controller: bool = False
    controller_config: ControllerConfig = field(default_factory=ControllerConfig)
    controller_log: str | None = None
    mode: str = PER_REQUEST
    keep_alive: float = DEFAULT_KEEP_ALIVE
    pool_size: int = 1
    sandbox_overhead: int = DEFAULT_OVERHEAD
    boot_delay: float = DEFAULT_BOOT_DELAY
    memory_limit: int | None = None
    event_log: str | None = None
    keep_events: bool = True
    store_dir: str | None = None
    hosts: dict = field(default_factory=dict)
    connector: object = None
    pin: bool = False
    use_launcher: bool = True


class Node:
    def __init__(self, config: NodeConfig | None = None, registry: FunctionRegistry | None = None):
        self.config = cfg = config or NodeConfig()
        if cfg.mode not in (PER_REQUEST, WARM_POOL):
            raise ValueError(f"unknown mode {cfg.mode!r}")
        self.registry = registry or FunctionRegistry(cfg.store_dir)
        if HTTP_FUNCTION not in self.registry:
            self.registry.register_function(http_spec(), b"platform:http", platform=True)
        self.gauge = MemoryGauge(cfg.memory_limit)
        self.events = EventLog(cfg.event_log, keep=cfg.keep_events)
        self.queues = {QueueClass.COMPUTE: TaskQueue("compute"),
                       QueueClass.COMMUNICATION: TaskQueue("communication")}
        self.warm_pool = None
        if cfg.mode == WARM_POOL:
            self.warm_pool = WarmPool(self.gauge, keep_alive=cfg.keep_alive,
                                      pool_size=cfg.pool_size, overhead=cfg.sandbox_overhead,
                                      boot_delay=cfg.boot_delay)
        self.cache = BinaryCache(self.registry)
        self.compute_runner = ComputeRunner(self.cache, warm_pool=self.warm_pool,
                                            use_launcher=cfg.use_launcher)
        comm_kw = {"hosts": cfg.hosts}
        if cfg.connector is not None:
            comm_kw["connector"] = cfg.connector
        self.comm_runner = CommRunner(**comm_kw)
        self.dispatcher = Dispatcher(self.registry, self.gauge, self.queues, self.events,
                                     account_compute_contexts=self.warm_pool is None,
                                     warm_pool=self.warm_pool)
        self.pool = EnginePool(cfg.cores_compute, cfg.cores_comm, self.queues,
                               self.compute_runner, self.comm_runner, self._on_complete,
                               self.events, pin=cfg.pin)
        self.controller: ControllerLoop | None = None
        self._latency = defaultdict(lambda: deque(maxlen=100_000))
        self._reaper: threading.Thread | None = None
        self._stopping = threading.Event()
        self.started_at = None

    # -- lifecycle ----------------------------------------------------------

    def start(self):
        self.started_at = time.monotonic()
        self.dispatcher.start()
        self.pool.start()
        if self.config.controller:
            self.controller = ControllerLoop(self.pool, self.queues, self.config.controller_config,
                                             self.config.controller_log)
            self.controller.start()
        if self.warm_pool is not None:
            self._reaper = threading.Thread(target=self._reap, name="reaper", daemon=True)
            self._reaper.start()
        return self

    def _reap(self):
        while not self._stopping.wait(0.1):
            self.warm_pool.reap()

    def stop(self):
        self._stopping.set()
        if self.controller is not None:
            self.controller.stop()
        self.pool.stop()
        self.dispatcher.stop()
        if self.warm_pool is not None:
            self.warm_pool.drain()
        self.events.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- registration / invocation -----------------------------------------

    def register_function(self, spec: FunctionSpec, binary: bytes) -> str:
        return self.registry.register_function(spec, binary)

    def register_composition(self, source: str):
        ir = dsl.compile_source(source, self.registry)
        self.registry.register_composition(ir.name, ir)
        return ir

    def invoke(self, composition: str, sets, *, cold: bool = False,
               timeout: float | None = 60.0) -> InvocationResult:
        return self.dispatcher.run(composition, list(sets), cold=cold, timeout=timeout)

    def _on_complete(self, result: TaskResult):
        task = result.task
        if task.enqueued_at:
            self._latency[task.queue.value].append(time.monotonic() - task.enqueued_at)
        self.dispatcher.deliver(result)

    # -- stats ----------------------------------------------------------------

    def stats(self) -> dict:
        n_compute, n_comm = self.pool.assignment()
        p_compute, p_comm = self.pool.physical()
        lat = {}
        classes = dict(self._latency)
        if self.dispatcher.completed_latencies:
            classes["invocation"] = list(self.dispatcher.completed_latencies)
        for cls, values in classes.items():
            arr = np.asarray(list(values), dtype=float)
            if arr.size:
                p50, p95, p99 = np.percentile(arr, [50, 95, 99])
                lat[cls] = {"count": int(arr.size), "p50": float(p50), "p95": float(p95),
                            "p99": float(p99)}
        out = {
            "uptime": time.monotonic() - (self.started_at or time.monotonic()),
            "mode": self.config.mode,
            "queues": {q.value: len(tq) for q, tq in self.queues.items()},
            "cores": {"compute": n_compute, "communication": n_comm,
                      "running_compute": p_compute, "running_communication": p_comm},
            "committed_bytes": self.gauge.value,
            "peak_committed_bytes": self.gauge.peak,
            "live_contexts": self.gauge.live,
            "in_flight": self.dispatcher.in_flight(),
            "latency": lat,
            "syscall_blocking": self.compute_runner.syscall_blocking,
        }
        if self.warm_pool is not None:
            out["warm_pool"] = {"idle": self.warm_pool.idle_count(),
                                "cold_starts": self.warm_pool.cold_starts,
                                "hot_starts": self.warm_pool.hot_starts,
                                "sandbox_overhead": self.warm_pool.overhead,
                                "boot_delay": self.warm_pool.boot_delay,
                                "emulated": True}
        return out

    # -- preload manifest -------------------------------------------------------

    def preload(self, path):
        """Register what a JSON manifest lists.

        ``{"functions": [{"spec": {...}, "binary": path | "fixture": name |
        "callable": "module:attr"}], "compositions": [DSL text or
        {"path": file}]}``; relative paths resolve against the manifest.
        """
        path = Path(path)
        manifest = json.loads(path.read_text())
        for entry in manifest.get("functions", []):
            spec = FunctionSpec.from_json(entry["spec"])
            if "fixture" in entry:
                from .fixtures import fixture_binary
                binary = fixture_binary(entry["fixture"])
            elif "callable" in entry:
                spec.backend = Backend.INPROCESS
                binary = entry["callable"].encode()
            else:
                binary = (path.parent / entry["binary"]).read_bytes()
            self.register_function(spec, binary)
        for comp in manifest.get("compositions", []):
            text = comp if isinstance(comp, str) else (path.parent / comp["path"]).read_text()
            self.register_composition(text)


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowfaas-node", description="Run a worker node.")
    p.add_argument("--listen", default="127.0.0.1:8080", help="addr:port for the HTTP API")
    p.add_argument("--cores-compute", type=_positive, default=2)
    p.add_argument("--cores-comm", type=_positive, default=1)
    p.add_argument("--controller", choices=["on", "off"], default="on")
    p.add_argument("--preload", help="JSON manifest of functions/compositions to register")
    p.add_argument("--event-log", help="append JSON-lines events here")
    p.add_argument("--controller-log", help="append per-tick controller metrics here")
    p.add_argument("--mode", choices=[PER_REQUEST, WARM_POOL], default=PER_REQUEST)
    p.add_argument("--keep-alive", type=float, default=DEFAULT_KEEP_ALIVE,
                   help="warm-pool: seconds an idle sandbox is retained")
    p.add_argument("--pool-size", type=int, default=1,
                   help="warm-pool: sandboxes pre-spawned per function")
    p.add_argument("--sandbox-overhead", type=int, default=DEFAULT_OVERHEAD,
                   help="warm-pool: bytes charged per retained sandbox")
    p.add_argument("--boot-delay", type=float, default=DEFAULT_BOOT_DELAY,
                   help="warm-pool: emulated sandbox boot time in seconds")
    p.add_argument("--memory-limit", type=int, help="node committed-memory limit in bytes")
    p.add_argument("--host-override", action="append", default=[], metavar="NAME=IP",
                   help="resolve NAME to IP for the HTTP function (tests)")
    p.add_argument("--no-events", action="store_true", help="do not keep events in memory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> NodeConfig:
    hosts = dict(item.split("=", 1) for item in args.host_override)
    return NodeConfig(cores_compute=args.cores_compute, cores_comm=args.cores_comm,
                      controller=args.controller == "on", controller_log=args.controller_log,
                      mode=args.mode, keep_alive=args.keep_alive, pool_size=args.pool_size,
                      sandbox_overhead=args.sandbox_overhead, boot_delay=args.boot_delay,
                      memory_limit=args.memory_limit, event_log=args.event_log,
                      keep_events=not args.no_events, hosts=hosts)


def main(argv=None):
    from .frontend import serve

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    host, _, port = args.listen.rpartition(":")
    node = Node(config_from_args(args))
    if args.preload:
        node.preload(args.preload)
    node.start()
    runner = asyncio.run_coroutine_threadsafe(serve(node, host or "127.0.0.1", int(port)),
                                              node.dispatcher.loop).result()
    log.info("listening on %s", args.listen)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    asyncio.run_coroutine_threadsafe(runner.cleanup(), node.dispatcher.loop).result(5)
    node.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
