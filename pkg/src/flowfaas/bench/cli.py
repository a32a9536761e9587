"""``flowfaas-bench``: stub services, load generation, trace replay, reports."""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

from ..errors import DslError


def _stub(args):
    from .stub import StubConfig, StubServer

    async def run():
        missing = {int(i) for i in args.missing.split(",") if i} if args.missing else set()
        stub = await StubServer(StubConfig(args.host, args.port, args.logs, missing,
                                           advertise=args.advertise)).start()
        print(f"stub listening on {args.host}:{stub.port}", flush=True)
        await asyncio.Event().wait()

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        pass
    return 0


def _body(args) -> bytes:
    from .loadgen import sets_body
    if args.body:
        return Path(args.body).read_bytes()
    if args.matmul:
        from ..fixtures import encode_matrix
        n = args.matmul
        m = encode_matrix([[(i * n + j) % 7 for j in range(n)] for i in range(n)])
        return sets_body({"A": [("a", b"", m)], "B": [("b", b"", m)]})
    return sets_body({args.input_set: [("x", b"", bytes(args.input_size))]})


def _loadgen(args):
    from .loadgen import loadgen
    rep = asyncio.run(loadgen(args.target, args.composition, args.rps, args.duration, _body(args),
                              cold_prob=args.cold_prob, open_loop=not args.closed,
                              concurrency=args.concurrency))
    if args.csv:
        rep.write_csv(args.csv)
    summary = rep.summary()
    if args.closed:
        summary["achieved_rps"] = rep.rps
    print(json.dumps(summary, indent=2))
    return 0


def _replay(args):
    from .replay import replay
    res = asyncio.run(replay(args.trace, args.target, time_scale=args.time_scale,
                             input_set=args.input_set))
    if args.csv:
        res.write_memory_csv(args.csv)
    print(json.dumps(res.summary(), indent=2))
    return 0


def _trace(args):
    from .replay import dump_manifest, idle_heavy_trace, trace_manifest, write_trace
    records = idle_heavy_trace(duration_s=args.duration, functions=args.functions,
                               burst_size=args.burst_size, input_size=args.input_size,
                               cold_prob=args.cold_prob, seed=args.seed)
    write_trace(args.out, records)
    if args.manifest:
        dump_manifest(args.manifest, trace_manifest(args.functions))
    print(f"{len(records)} records -> {args.out}")
    return 0


def inferred_registry(ast):
    """Registry whose functions declare exactly the sets the source uses."""
    from ..data import FunctionSpec, InputDecl
    from ..node import HTTP_FUNCTION, http_spec
    from ..registry import FunctionRegistry
    reg = FunctionRegistry()
    reg.register_function(http_spec(), b"platform:http", platform=True)
    seen: dict = {}
    for st in ast.statements:
        if st.function == HTTP_FUNCTION:
            continue
        ins, outs = seen.setdefault(st.function, ({}, []))
        for b in st.inputs:
            ins[b.declared] = ins.get(b.declared, True) and b.optional
        for o in st.outputs:
            if o.declared not in outs:
                outs.append(o.declared)
    for name, (ins, outs) in seen.items():
        reg.register_function(FunctionSpec(name, input_sets=[InputDecl(n, opt) for n, opt in ins.items()],
                                           output_sets=outs), b"")
    return reg


def _dsl_check(args):
    from .. import dsl
    text = Path(args.file).read_text() if args.file != "-" else sys.stdin.read()
    try:
        ast = dsl.parse(text)
        if args.preload:
            from ..node import Node, NodeConfig
            node = Node(NodeConfig(use_launcher=False))
            node.preload(args.preload)
            registry = node.registry
        else:
            registry = inferred_registry(ast)
        ir = dsl.compile_ast(ast, registry)
    except DslError as exc:
        print(f"error[{getattr(exc, 'kind', 'dsl')}]: {exc}")
        return 1
    print(f"OK {len(ir.nodes)} {len(ir.edges)}")
    return 0


def _report(args):
    from ..events import read_log
    from .report import report
    print(json.dumps(report(read_log(args.event_log)), indent=2))
    return 0


def _simulate(args):
    from ..controller import mixed_workload, simulate, sweep_static
    w = mixed_workload(args.seed)
    static = sweep_static(args.cores, w)
    ctl = simulate(args.cores, w)
    best = max(static.values(), key=lambda r: r.throughput)
    print(json.dumps({"static": {k: r.throughput for k, r in static.items()},
                      "controlled": ctl.throughput, "best_static": best.throughput,
                      "ratio": ctl.throughput / best.throughput, "moves": ctl.moves}, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="flowfaas-bench")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("stub", help="serve deterministic stub HTTP services")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8081)
    s.add_argument("--logs", type=int, default=4, help="log servers listed by /auth")
    s.add_argument("--missing", help="comma-separated log indices answered by /missing")
    s.add_argument("--advertise", help="host:port to put in /auth URLs")
    s.set_defaults(fn=_stub)

    def target_args(sp):
        sp.add_argument("--target", default="http://127.0.0.1:8080")
        sp.add_argument("--input-set", default="In")

    s = sub.add_parser("loadgen", help="open-loop load against one composition")
    target_args(s)
    s.add_argument("--composition", required=True)
    s.add_argument("--rps", type=float, default=10.0)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--cold-prob", type=float, default=0.0)
    s.add_argument("--closed", action="store_true", help="closed loop (peak throughput)")
    s.add_argument("--concurrency", type=int, default=4)
    s.add_argument("--body", help="file with the JSON invoke body")
    s.add_argument("--matmul", type=int, help="send two NxN matrices A and B")
    s.add_argument("--input-size", type=int, default=64)
    s.add_argument("--csv")
    s.set_defaults(fn=_loadgen)

    s = sub.add_parser("replay", help="replay a trace CSV and sample committed memory")
    target_args(s)
    s.add_argument("trace")
    s.add_argument("--time-scale", type=float, help="wall seconds per trace second")
    s.add_argument("--csv", help="write the memory timeseries here")
    s.set_defaults(fn=_replay)

    s = sub.add_parser("trace", help="generate an idle-heavy synthetic trace")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", help="also write a node preload manifest")
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--functions", type=int, default=10)
    s.add_argument("--burst-size", type=int, default=40)
    s.add_argument("--input-size", type=int, default=4096)
    s.add_argument("--cold-prob", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=11)
    s.set_defaults(fn=_trace)

    s = sub.add_parser("dsl", help="composition language tools")
    dsub = s.add_subparsers(dest="dsl_verb", required=True)
    c = dsub.add_parser("check", help="parse and compile; prints 'OK <nodes> <edges>'")
    c.add_argument("file", help="source file, or - for stdin")
    c.add_argument("--preload", help="manifest with the functions to compile against")
    c.set_defaults(fn=_dsl_check)

    s = sub.add_parser("report", help="summarize a recorded event log")
    s.add_argument("event_log")
    s.set_defaults(fn=_report)

    s = sub.add_parser("simulate", help="controller vs. static splits on the simulator")
    s.add_argument("--cores", type=int, default=8)
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(fn=_simulate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
