"""Metrics derived from a recorded event log (deterministic for a given log)."""

from __future__ import annotations

from collections import defaultdict

from .loadgen import summarize

STAGES = ("marshal", "load", "transfer", "execute", "output")


def max_overlap(records, queue: str = "compute") -> int:
    """Largest number of simultaneously running tasks of one queue class."""
    level = peak = 0
    for r in records:
        if r.get("queue") != queue:
            continue
        if r["event"] == "start":
            level += 1
            peak = max(peak, level)
        elif r["event"] == "complete":
            level -= 1
    return peak


def alternation_violations(records, queue: str = "compute") -> list:
    """Engines whose start/complete events do not strictly alternate."""
    state: dict = {}
    bad = []
    for r in records:
        if r.get("queue") != queue or r["event"] not in ("start", "complete"):
            continue
        e = r["engine"]
        prev = state.get(e)
        if (r["event"] == "start" and prev == "start") or \
                (r["event"] == "complete" and prev != "start"):
            bad.append(r)
        state[e] = r["event"]
    return bad


def report(records) -> dict:
    records = sorted(records, key=lambda r: r["ts"])
    invoked = {}
    latencies = []
    outcomes: dict = defaultdict(int)
    counts: dict = defaultdict(int)
    for r in records:
        counts[r["event"]] += 1
        if r["event"] == "invoke":
            invoked[r["inv"]] = r["ts"]
        elif r["event"] == "finish" and r["inv"] in invoked:
            latencies.append(r["ts"] - invoked[r["inv"]])
            outcomes[r.get("status", "ok")] += 1
    reassign = [r for r in records if r["event"] == "reassign" and r.get("phase") == "done"]
    return {
        "events": dict(counts),
        "invocations": dict(outcomes),
        "latency": summarize(latencies),
        "max_compute_overlap": max_overlap(records, "compute"),
        "max_comm_overlap": max_overlap(records, "communication"),
        "alternation_violations": len(alternation_violations(records)),
        "reassignments": len(reassign),
        "span": (records[-1]["ts"] - records[0]["ts"]) if records else 0.0,
    }


def stage_table(timings) -> str:
    """Per-stage latency table (microseconds) from invocation timing dicts."""
    cols = defaultdict(list)
    for t in timings:
        total = t.get("total", 0.0)
        known = 0.0
        for s in STAGES:
            v = t.get(s, 0.0)
            cols[s].append(v)
            known += v
        cols["other"].append(max(0.0, total - known))
        cols["total"].append(total)
    lines = [f"{'stage':<10}{'p50 us':>12}{'p99 us':>12}{'mean us':>12}"]
    for s in (*STAGES, "other", "total"):
        st = summarize(cols[s])
        if st["count"]:
            lines.append(f"{s:<10}{st['p50'] * 1e6:>12.1f}{st['p99'] * 1e6:>12.1f}"
                         f"{st['mean'] * 1e6:>12.1f}")
    return "\n".join(lines)
