"""Open-loop load generation against a node's invoke endpoint.

A dedicated timer task issues requests on a fixed schedule and never waits
for responses; responses are collected concurrently. Latency is measured to
the first byte of the response (headers received).
"""

from __future__ import annotations

import asyncio
import base64
import csv
import json
import random
import time
from dataclasses import dataclass, field

import aiohttp
import numpy as np


def sets_body(sets: dict[str, list[tuple[str, bytes, bytes]]]) -> bytes:
    """JSON invoke body from ``{set: [(ident, key, data), ...]}``."""
    return json.dumps({"sets": [
        {"name": name, "items": [{"ident": i, "key_b64": base64.b64encode(k).decode(),
                                  "data_b64": base64.b64encode(d).decode()}
                                 for i, k, d in items]}
        for name, items in sets.items()]}).encode()


def invoke_url(target: str, composition: str) -> str:
    return f"{target.rstrip('/')}/v1/compositions/{composition}:invoke"


def summarize(latencies) -> dict:
    arr = np.asarray(latencies, dtype=float)
    if arr.size == 0:
        return {"count": 0, "p50": None, "p95": None, "p99": None, "mean": None,
                "variance": None}
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return {"count": int(arr.size), "p50": float(p50), "p95": float(p95), "p99": float(p99),
            "mean": float(arr.mean()), "variance": float(arr.var())}


@dataclass
class Sample:
    scheduled: float     # seconds from start
    issued: float        # seconds from start
    latency: float | None
    status: int
    cold: bool


@dataclass
class LoadReport:
    rps: float
    duration: float
    samples: list[Sample] = field(default_factory=list)

    def ok_latencies(self, cold: bool | None = None):
        return [s.latency for s in self.samples
                if s.status == 200 and s.latency is not None and (cold is None or s.cold == cold)]

    def issue_deviation(self):
        return [s.issued - s.scheduled for s in self.samples]

    def summary(self) -> dict:
        dev = np.abs(np.asarray(self.issue_deviation() or [0.0]))
        statuses: dict[str, int] = {}
        for s in self.samples:
            statuses[str(s.status)] = statuses.get(str(s.status), 0) + 1
        return {"rps": self.rps, "duration": self.duration, "issued": len(self.samples),
                "statuses": statuses, "latency": summarize(self.ok_latencies()),
                "hot": summarize(self.ok_latencies(False)),
                "cold": summarize(self.ok_latencies(True)),
                "issue_deviation_p99": float(np.percentile(dev, 99))}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheduled_s", "issued_s", "latency_s", "status", "cold"])
            for s in self.samples:
                w.writerow([f"{s.scheduled:.6f}", f"{s.issued:.6f}",
                            "" if s.latency is None else f"{s.latency:.6f}", s.status,
                            int(s.cold)])


async def _send(session, url, body, cold, scheduled, issued, t0, samples):
    headers = {"Content-Type": "application/json"}
    if cold:
        headers["X-Cold-Start"] = "1"
    start = time.perf_counter()
    try:
        async with session.post(url, data=body, headers=headers) as resp:
            first = time.perf_counter()
            await resp.read()
            samples.append(Sample(scheduled, issued, first - start, resp.status, cold))
    except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
        samples.append(Sample(scheduled, issued, None, 0, cold))


async def loadgen(target: str, composition: str, rps: float, duration: float, body: bytes,
                  *, cold_prob: float = 0.0, seed: int = 1, open_loop: bool = True,
                  concurrency: int = 1, timeout: float = 60.0) -> LoadReport:
    """Fixed-rate open-loop arrivals (or a closed loop with ``open_loop=False``)."""
    report = LoadReport(rps, duration)
    if not open_loop:
        return await closed_loop(target, composition, body, duration=duration,
                                 concurrency=concurrency, timeout=timeout)
    if rps <= 0 or duration <= 0:
        return report
    rng = random.Random(seed)
    url = invoke_url(target, composition)
    n = int(rps * duration)
    conn = aiohttp.TCPConnector(limit=0)
    async with aiohttp.ClientSession(connector=conn,
                                     timeout=aiohttp.ClientTimeout(total=timeout)) as session:
        pending = set()
        t0 = time.perf_counter()
        for i in range(n):
            scheduled = i / rps
            delay = t0 + scheduled - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            issued = time.perf_counter() - t0
            cold = rng.random() < cold_prob
            task = asyncio.ensure_future(_send(session, url, body, cold, scheduled, issued, t0,
                                               report.samples))
            pending.add(task)
            task.add_done_callback(pending.discard)
        if pending:
            await asyncio.gather(*pending)
    report.samples.sort(key=lambda s: s.scheduled)
    return report


async def closed_loop(target: str, composition: str, body: bytes, *, duration: float,
                      concurrency: int = 1, timeout: float = 60.0) -> LoadReport:
    """Each worker sends back-to-back; the report's rps is the achieved rate."""
    url = invoke_url(target, composition)
    samples: list[Sample] = []
    async with aiohttp.ClientSession(connector=aiohttp.TCPConnector(limit=0),
                                     timeout=aiohttp.ClientTimeout(total=timeout)) as session:
        t0 = time.perf_counter()
        end = t0 + duration

        async def worker():
            while time.perf_counter() < end:
                now = time.perf_counter() - t0
                await _send(session, url, body, False, now, now, t0, samples)

        await asyncio.gather(*(worker() for _ in range(concurrency)))
        elapsed = time.perf_counter() - t0
    ok = sum(1 for s in samples if s.status == 200)
    report = LoadReport(ok / elapsed if elapsed else 0.0, elapsed, samples)
    return report
