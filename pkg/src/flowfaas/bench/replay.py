"""Trace replay with committed-memory sampling.

Trace format: CSV with header ``offset_ms,composition,input_size,cold_hint``,
sorted by offset. Replay can compress time by ``time_scale`` (0.1 runs a
10-minute trace in one minute); memory is sampled every 100 ms of trace
time.
"""

from __future__ import annotations

import asyncio
import csv
import json
import os
import random
import time
from dataclasses import dataclass

import aiohttp
import numpy as np

from .loadgen import invoke_url, sets_body, summarize

SAMPLE_PERIOD = 0.1
FIELDS = ["offset_ms", "composition", "input_size", "cold_hint"]


@dataclass(frozen=True)
class TraceRecord:
    offset_ms: int
    composition: str
    input_size: int
    cold_hint: bool = False


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rows = [TraceRecord(int(r["offset_ms"]), r["composition"], int(r["input_size"]),
                            r["cold_hint"].strip().lower() in ("1", "true", "yes"))
                for r in csv.DictReader(fh)]
    if any(b.offset_ms < a.offset_ms for a, b in zip(rows, rows[1:])):
        raise ValueError("trace records must be sorted by offset")
    return rows


def write_trace(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELDS)
        for r in records:
            w.writerow([r.offset_ms, r.composition, r.input_size, int(r.cold_hint)])


def idle_heavy_trace(*, duration_s: float = 600.0, functions: int = 10, min_gap_s: float = 60.0,
                     max_gap_s: float = 90.0, burst_s: float = 2.0, burst_size: int = 40,
                     input_size: int = 4096, cold_prob: float = 0.0, prefix: str = "Fn",
                     seed: int = 11) -> list[TraceRecord]:
    """Short bursts across many functions, separated by long idle gaps."""
    rng = random.Random(seed)
    out = []
    t = rng.uniform(1.0, 5.0)
    while t + burst_s < duration_s:
        for _ in range(burst_size):
            out.append(TraceRecord(int((t + rng.uniform(0, burst_s)) * 1000),
                                   f"{prefix}{rng.randrange(functions)}", input_size,
                                   rng.random() < cold_prob))
        t += burst_s + rng.uniform(min_gap_s, max_gap_s)
    out.sort(key=lambda r: r.offset_ms)
    return out


def default_time_scale() -> float:
    return 1.0 if os.environ.get("FLOWFAAS_REALTIME_TRACE") else 0.1


@dataclass
class ReplayResult:
    latencies: list
    statuses: dict
    memory: list          # (trace seconds, committed bytes)
    time_scale: float

    def average_committed(self) -> float:
        return float(np.mean([m for _, m in self.memory])) if self.memory else 0.0

    def summary(self) -> dict:
        mem = [m for _, m in self.memory]
        return {"invocations": len(self.latencies), "statuses": self.statuses,
                "latency": summarize(self.latencies), "time_scale": self.time_scale,
                "memory_samples": len(mem), "avg_committed_bytes": self.average_committed(),
                "peak_committed_bytes": max(mem) if mem else 0}

    def write_memory_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trace_s", "committed_bytes"])
            w.writerows(self.memory)


async def replay(trace, target: str, *, time_scale: float | None = None,
                 input_set: str = "In", timeout: float = 60.0) -> ReplayResult:
    """Issue the trace's invocations at their (scaled) offsets against ``target``."""
    records = read_trace(trace) if isinstance(trace, (str, os.PathLike)) else list(trace)
    scale = default_time_scale() if time_scale is None else time_scale
    latencies: list[float] = []
    statuses: dict[str, int] = {}
    memory: list = []
    stats_url = f"{target.rstrip('/')}/v1/stats"
    bodies: dict[int, bytes] = {}
    end = (records[-1].offset_ms / 1000 if records else 0.0) + 1.0

    async with aiohttp.ClientSession(connector=aiohttp.TCPConnector(limit=0),
                                     timeout=aiohttp.ClientTimeout(total=timeout)) as session:
        t0 = time.perf_counter()

        def trace_now():
            return (time.perf_counter() - t0) / scale

        async def sampler():
            k = 0
            while True:
                at = t0 + k * SAMPLE_PERIOD * scale
                delay = at - time.perf_counter()
                if delay > 0:
                    await asyncio.sleep(delay)
                try:
                    async with session.get(stats_url) as resp:
                        doc = await resp.json()
                    memory.append((round(k * SAMPLE_PERIOD, 3), doc["committed_bytes"]))
                except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
                    pass
                k += 1

        async def send(rec: TraceRecord):
            body = bodies.get(rec.input_size)
            if body is None:
                body = bodies[rec.input_size] = sets_body(
                    {input_set: [("x", b"", bytes(rec.input_size))]})
            headers = {"Content-Type": "application/json"}
            if rec.cold_hint:
                headers["X-Cold-Start"] = "1"
            start = time.perf_counter()
            try:
                async with session.post(invoke_url(target, rec.composition), data=body,
                                        headers=headers) as resp:
                    first = time.perf_counter()
                    await resp.read()
                    key = str(resp.status)
                    if resp.status == 200:
                        latencies.append(first - start)
            except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
                key = "error"
            statuses[key] = statuses.get(key, 0) + 1

        sampling = asyncio.ensure_future(sampler())
        pending = set()
        for rec in records:
            delay = t0 + rec.offset_ms / 1000 * scale - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            task = asyncio.ensure_future(send(rec))
            pending.add(task)
            task.add_done_callback(pending.discard)
        if pending:
            await asyncio.gather(*pending)
        rest = t0 + end * scale - time.perf_counter()
        if rest > 0:
            await asyncio.sleep(rest)
        sampling.cancel()
        try:
            await sampling
        except asyncio.CancelledError:
            pass
    return ReplayResult(latencies, statuses, memory, scale)


def trace_manifest(functions: int = 10, prefix: str = "Fn", capacity: int = 16 << 20,
                   fixture: str = "echo") -> dict:
    """Preload manifest registering the compositions an idle-heavy trace calls."""
    fns, comps = [], []
    for i in range(functions):
        name = f"{prefix.lower()}{i}"
        fns.append({"spec": {"name": name, "input_sets": ["In"], "output_sets": ["In"],
                             "memory_capacity": capacity, "timeout": 10},
                    "fixture": fixture})
        comps.append(f"composition {prefix}{i}(In) => Out {{ {name}(In = all In) => (Out = In); }}")
    return {"functions": fns, "compositions": comps}


def dump_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
