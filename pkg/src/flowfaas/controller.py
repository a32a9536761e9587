"""Core rebalancing between compute and communication engines.

A PI controller watches how fast each engine type's queue grows. A positive
control signal moves one core from communication to compute, a negative
one moves a core the other way. At least one core of each type is kept.
"""

from __future__ import annotations

import heapq
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NONE = "none"
COMM_TO_COMPUTE = "comm_to_compute"
COMPUTE_TO_COMM = "compute_to_comm"


@dataclass
class ControllerConfig:
    period: float = 0.030
    kp: float = 1.0
    ki: float = 0.1
    threshold: float = 1.0          # tasks per period
    integral_clamp: float = 100.0


@dataclass
class Decision:
    action: str = NONE
    reason: str = ""
    e: float = 0.0
    u: float = 0.0

    def __bool__(self):
        return self.action != NONE


def error_signal(g_compute: float, g_comm: float) -> float:
    """Positive when the compute queue grows faster than the communication one."""
    return g_compute - g_comm


class PIController:
    """Growth is measured in tasks per period, so θ is in the same unit."""

    def __init__(self, n_compute: int, n_comm: int, config: ControllerConfig | None = None):
        if n_compute < 1 or n_comm < 1:
            raise ValueError("need at least one core of each type")
        self.config = config or ControllerConfig()
        self.n_compute = n_compute
        self.n_comm = n_comm
        self.prev = (0, 0)
        self.integral = 0.0
        self.ticks = 0

    @property
    def total(self):
        return self.n_compute + self.n_comm

    def tick(self, now: float, q_compute_len: int, q_comm_len: int) -> Decision:
        cfg = self.config
        g_compute = q_compute_len - self.prev[0]
        g_comm = q_comm_len - self.prev[1]
        self.prev = (q_compute_len, q_comm_len)
        self.ticks += 1
        e = error_signal(g_compute, g_comm)
        self.integral = max(-cfg.integral_clamp, min(cfg.integral_clamp, self.integral + e))
        u = cfg.kp * e + cfg.ki * self.integral
        if u > cfg.threshold:
            if self.n_comm > 1:
                return Decision(COMM_TO_COMPUTE, "", e, u)
            return Decision(NONE, "floor", e, u)
        if u < -cfg.threshold:
            if self.n_compute > 1:
                return Decision(COMPUTE_TO_COMM, "", e, u)
            return Decision(NONE, "floor", e, u)
        return Decision(NONE, "", e, u)

    def apply(self, decision: Decision):
        """Record a move that was carried out; resets the integral."""
        if decision.action == COMM_TO_COMPUTE:
            self.n_compute += 1
            self.n_comm -= 1
        elif decision.action == COMPUTE_TO_COMM:
            self.n_compute -= 1
            self.n_comm += 1
        else:
            return
        self.integral = 0.0
        assert self.n_compute >= 1 and self.n_comm >= 1


class ControllerLoop(threading.Thread):
    """Runs the controller against a live engine pool every period."""

    def __init__(self, pool, queues, config: ControllerConfig | None = None,
                 metrics_path: str | None = None, keep: int = 100_000):
        super().__init__(name="controller", daemon=True)
        from .queues import QueueClass
        self._qc = QueueClass
        self.pool = pool
        self.queues = queues
        n_compute, n_comm = pool.assignment()
        self.controller = PIController(n_compute, n_comm, config)
        self.metrics: deque = deque(maxlen=keep)
        self._fh = open(metrics_path, "a", buffering=1) if metrics_path else None
        self._halt = threading.Event()

    def step(self, now: float | None = None) -> Decision:
        now = time.monotonic() if now is None else now
        qc = len(self.queues[self._qc.COMPUTE])
        qm = len(self.queues[self._qc.COMMUNICATION])
        d = self.controller.tick(now, qc, qm)
        if d:
            to = self._qc.COMPUTE if d.action == COMM_TO_COMPUTE else self._qc.COMMUNICATION
            if self.pool.reassign(to) is not None:
                self.controller.apply(d)
            else:
                d = Decision(NONE, "floor", d.e, d.u)
        rec = {"ts": now, "period": self.controller.config.period, "e": d.e, "u": d.u,
               "n_compute": self.controller.n_compute, "n_comm": self.controller.n_comm,
               "q_compute": qc, "q_comm": qm, "decision": d.action}
        if d.reason:
            rec["reason"] = d.reason
        self.metrics.append(rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec) + "\n")
        return d

    def run(self):
        period = self.controller.config.period
        next_at = time.monotonic()
        while not self._halt.is_set():
            next_at += period
            self.step()
            delay = next_at - time.monotonic()
            if delay > 0:
                self._halt.wait(delay)
            else:
                next_at = time.monotonic()

    def stop(self):
        self._halt.set()
        if self.is_alive():
            self.join(2)
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# --- discrete-time simulator ---------------------------------------------

@dataclass
class Phase:
    duration: float       # seconds
    compute_rate: float   # arrivals per second
    comm_rate: float


@dataclass
class SimWorkload:
    phases: list[Phase]
    compute_service: float = 0.004     # core-seconds per compute task
    comm_cpu: float = 0.0005           # core-seconds per communication task
    comm_latency: float = 0.020        # network wait per communication task
    max_in_flight: int = 256
    seed: int = 7

    @property
    def horizon(self):
        return sum(p.duration for p in self.phases)


@dataclass
class SimResult:
    completed_compute: int
    completed_comm: int
    horizon: float
    splits: list = field(default_factory=list)     # (t, n_compute, n_comm) per tick
    moves: int = 0

    @property
    def throughput(self):
        return (self.completed_compute + self.completed_comm) / self.horizon


def _arrivals(rng, workload: SimWorkload, which: str):
    out = []
    t0 = 0.0
    for ph in workload.phases:
        rate = ph.compute_rate if which == "compute" else ph.comm_rate
        if rate > 0:
            n = rng.poisson(rate * ph.duration)
            out.extend(np.sort(rng.uniform(t0, t0 + ph.duration, n)).tolist())
        t0 += ph.duration
    return out


def simulate(total: int, workload: SimWorkload, *, static_compute: int | None = None,
             config: ControllerConfig | None = None, dt: float = 0.001) -> SimResult:
    """Time-stepped model of the engine pool under open-loop arrivals.

    With ``static_compute`` the split is fixed; otherwise the real
    :class:`PIController` runs every period. Engines obey the same switching
    rules as the live pool: a compute core finishes its task first, a
    communication core stops accepting work and drains what it holds.
    """
    cfg = config or ControllerConfig()
    rng = np.random.default_rng(workload.seed)
    arr_c = deque(_arrivals(rng, workload, "compute"))
    arr_m = deque(_arrivals(rng, workload, "comm"))
    n_c = static_compute if static_compute is not None else total // 2
    if not 1 <= n_c <= total - 1:
        raise ValueError("split must leave one core of each type")
    ctl = None if static_compute is not None else PIController(n_c, total - n_c, cfg)
    # per core: role, target, compute remaining work, comm ready-work queue, waiting heap
    role = ["c"] * n_c + ["m"] * (total - n_c)
    target = list(role)
    busy = [0.0] * total
    ready: list[deque] = [deque() for _ in range(total)]   # cpu work left per request
    waiting: list[list] = [[] for _ in range(total)]       # (wake time, id) heaps
    inflight = [0] * total
    q_c = q_m = 0
    done_c = done_m = 0
    splits = []
    moves = 0
    steps = int(round(workload.horizon / dt))
    tick_every = max(1, int(round(cfg.period / dt)))
    half = workload.comm_cpu / 2
    for step in range(steps):
        now = step * dt
        while arr_c and arr_c[0] <= now:
            arr_c.popleft()
            q_c += 1
        while arr_m and arr_m[0] <= now:
            arr_m.popleft()
            q_m += 1
        if ctl is not None and step % tick_every == 0:
            d = ctl.tick(now, q_c, q_m)
            if d:
                src, dst = ("m", "c") if d.action == COMM_TO_COMPUTE else ("c", "m")
                pending = [i for i in range(total) if target[i] == src and role[i] == dst]
                cands = [i for i in range(total) if target[i] == src]
                if len(cands) > 1:
                    pick = pending[0] if pending else min(
                        cands, key=lambda i: (busy[i] > 0 or inflight[i] > 0, i))
                    target[pick] = dst
                    ctl.apply(d)
                    moves += 1
            splits.append((now, ctl.n_compute, ctl.n_comm))
        for i in range(total):
            if role[i] != target[i]:
                if role[i] == "c" and busy[i] <= 0:
                    role[i] = target[i]
                elif role[i] == "m" and inflight[i] == 0:
                    role[i] = target[i]
            budget = dt
            if role[i] == "c":
                while budget > 1e-12:
                    if busy[i] <= 0:
                        if target[i] != "c" or q_c == 0:
                            break
                        q_c -= 1
                        busy[i] = workload.compute_service
                    use = min(budget, busy[i])
                    busy[i] -= use
                    budget -= use
                    if busy[i] <= 1e-12:
                        busy[i] = 0.0
                        done_c += 1
            else:
                w = waiting[i]
                while w and w[0][0] <= now:
                    heapq.heappop(w)
                    ready[i].append([half, 2])
                while target[i] == "m" and q_m and inflight[i] < workload.max_in_flight:
                    q_m -= 1
                    inflight[i] += 1
                    ready[i].append([half, 1])
                r = ready[i]
                while budget > 1e-12 and r:
                    job = r[0]
                    use = min(budget, job[0])
                    job[0] -= use
                    budget -= use
                    if job[0] <= 1e-12:
                        r.popleft()
                        if job[1] == 1:
                            heapq.heappush(w, (now + workload.comm_latency, id(job)))
                        else:
                            inflight[i] -= 1
                            done_m += 1
    if ctl is None:
        splits = [(0.0, n_c, total - n_c)]
    return SimResult(done_c, done_m, workload.horizon, splits, moves)


def mixed_workload(seed: int = 7) -> SimWorkload:
    """Alternating compute-heavy and I/O-heavy phases, each saturating an
    8-core node on its own: no static split serves both well."""
    phases = []
    for _ in range(3):
        phases.append(Phase(3.0, compute_rate=3000, comm_rate=500))
        phases.append(Phase(3.0, compute_rate=100, comm_rate=14000))
    return SimWorkload(phases, seed=seed)


def sweep_static(total: int, workload: SimWorkload) -> dict[int, SimResult]:
    return {k: simulate(total, workload, static_compute=k) for k in range(1, total)}
