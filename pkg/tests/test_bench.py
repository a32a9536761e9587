import asyncio
import json

import httpx
import pytest

from flowfaas.bench import cli
from flowfaas.bench.loadgen import LoadReport, Sample, closed_loop, loadgen, sets_body, summarize
from flowfaas.bench.replay import (TraceRecord, idle_heavy_trace, read_trace, replay,
                                   trace_manifest, write_trace)
from flowfaas.bench.report import alternation_violations, max_overlap, report, stage_table
from flowfaas.bench.stub import StubConfig, StubThread, log_text, response
from flowfaas.data import Backend, FunctionSpec
from flowfaas.events import read_log
from flowfaas.fixtures.logproc import RENDER_LOGS

from conftest import Api, one

PY = "flowfaas.fixtures.pyfuncs"


def echo_node(node):
    node.register_function(FunctionSpec("echo", input_sets=["In"], output_sets=["In"],
                                        backend=Backend.INPROCESS), f"{PY}:echo".encode())
    node.register_composition("composition E(In) => Out { echo(In = all In) => (Out = In); }")


def test_stub_deterministic():
    with StubThread(StubConfig(logs=3, missing={1})) as a, StubThread(StubConfig(logs=3)) as b:
        auth = httpx.get(f"{a.base}/auth").text.split()
        assert auth == [f"{a.base}/logs/0", f"{a.base}/missing", f"{a.base}/logs/2"]
        for s in (a, b):
            assert httpx.get(f"{s.base}/logs/2").content == log_text(2)
            assert httpx.get(f"{s.base}/missing").status_code == 404
        assert a.stub.emitted[-2] == b.stub.emitted[-2] == response(200, log_text(2))


def test_summarize_empty_and_basic():
    assert summarize([])["p50"] is None
    s = summarize([1.0, 2.0, 3.0])
    assert s["p50"] == 2.0 and s["count"] == 3 and s["variance"] == pytest.approx(2 / 3)


def test_loadgen_zero_rate():
    rep = asyncio.run(loadgen("http://127.0.0.1:9", "E", 0, 1.0, b"{}"))
    assert rep.samples == [] and rep.summary()["latency"]["count"] == 0


def test_loadgen_open_and_closed(node, tmp_path):
    echo_node(node)
    api = Api(node)
    try:
        body = sets_body({"In": [("x", b"", b"hi")]})
        rep = asyncio.run(loadgen(api.base, "E", 50, 0.4, body, cold_prob=0.5, seed=3))
        assert len(rep.samples) == 20 and all(s.status == 200 for s in rep.samples)
        assert any(s.cold for s in rep.samples) and not all(s.cold for s in rep.samples)
        assert [s.scheduled for s in rep.samples] == sorted(s.scheduled for s in rep.samples)
        assert rep.summary()["issue_deviation_p99"] < 0.05
        rep.write_csv(tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().count("\n") == 21
        closed = asyncio.run(closed_loop(api.base, "E", body, duration=0.3, concurrency=2))
        assert closed.rps > 10
    finally:
        api.close()


def test_report_ignores_missing_latency():
    rep = LoadReport(1, 1, [Sample(0, 0, None, 0, False), Sample(1, 1, 0.5, 200, True)])
    s = rep.summary()
    assert s["statuses"] == {"0": 1, "200": 1} and s["cold"]["count"] == 1
    assert s["hot"]["count"] == 0


def test_trace_io(tmp_path):
    recs = idle_heavy_trace(duration_s=400, functions=5, seed=2)
    assert recs == idle_heavy_trace(duration_s=400, functions=5, seed=2)
    assert len(recs) % 40 == 0 and len(recs) >= 160
    gaps = [b.offset_ms - a.offset_ms for a, b in zip(recs, recs[1:])]
    assert max(gaps) >= 58_000 and min(gaps) >= 0
    write_trace(tmp_path / "t.csv", recs)
    assert read_trace(tmp_path / "t.csv") == recs
    (tmp_path / "bad.csv").write_text("offset_ms,composition,input_size,cold_hint\n5,a,1,0\n1,a,1,0\n")
    with pytest.raises(ValueError):
        read_trace(tmp_path / "bad.csv")


def test_replay_samples_memory(node, tmp_path):
    echo_node(node)
    api = Api(node)
    try:
        trace = [TraceRecord(100, "E", 32), TraceRecord(300, "E", 32, True),
                 TraceRecord(300, "E", 64)]
        res = asyncio.run(replay(trace, api.base, time_scale=0.5))
    finally:
        api.close()
    assert res.statuses == {"200": 3} and len(res.latencies) == 3
    assert 10 <= len(res.memory) <= 16
    assert res.memory[0][0] == 0.0 and res.memory[1][0] == 0.1
    res.write_memory_csv(tmp_path / "m.csv")
    assert res.summary()["memory_samples"] == len(res.memory)


def test_trace_manifest_preloads(node_factory, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(trace_manifest(2)))
    node = node_factory()
    node.preload(path)
    out = node.invoke("Fn1", [one("In", b"abc")])
    assert out.set("Out").items[0].data == b"abc"


def test_event_report(node_factory, tmp_path):
    log = tmp_path / "ev.jsonl"
    node = node_factory(event_log=str(log))
    echo_node(node)
    for _ in range(5):
        node.invoke("E", [one("In", b"x")])
    node.stop()
    recs = read_log(log)
    rep = report(recs)
    assert rep["invocations"] == {"ok": 5} and rep["latency"]["count"] == 5
    assert rep["alternation_violations"] == 0 and 1 <= rep["max_compute_overlap"] <= 2
    assert report(recs) == rep


def test_overlap_helpers():
    ev = [{"event": "start", "engine": 0, "queue": "compute"},
          {"event": "start", "engine": 1, "queue": "compute"},
          {"event": "complete", "engine": 0, "queue": "compute"},
          {"event": "start", "engine": 1, "queue": "compute"}]
    assert max_overlap(ev) == 2
    assert alternation_violations(ev) == [ev[3]]


def test_stage_table():
    table = stage_table([{"total": 1e-3, "execute": 4e-4, "load": 1e-4}] * 3)
    lines = table.splitlines()
    assert lines[0].split()[0] == "stage" and len(lines) == 8
    other = next(line for line in lines if line.startswith("other"))
    assert float(other.split()[1]) == pytest.approx(500.0)


def test_cli_dsl_check(tmp_path, capsys):
    src = tmp_path / "r.flow"
    src.write_text(RENDER_LOGS)
    assert cli.main(["dsl", "check", str(src)]) == 0
    assert capsys.readouterr().out.strip() == "OK 5 5"
    src.write_text("composition X(A) => B { f(In = all A) => (A = Out); }")
    assert cli.main(["dsl", "check", str(src)]) == 1
    assert capsys.readouterr().out.startswith("error[")


def test_cli_trace(tmp_path, capsys):
    out, man = tmp_path / "t.csv", tmp_path / "m.json"
    assert cli.main(["trace", "--out", str(out), "--manifest", str(man), "--duration", "200",
                     "--functions", "3"]) == 0
    assert read_trace(out) and json.loads(man.read_text())["compositions"]
    assert "records" in capsys.readouterr().out


def test_node_cli_parser():
    from flowfaas.node import build_parser, config_from_args
    cfg = config_from_args(build_parser().parse_args(
        ["--cores-compute", "3", "--controller", "off", "--mode", "warm-pool",
         "--host-override", "a.b=127.0.0.1"]))
    assert (cfg.cores_compute, cfg.controller, cfg.mode) == (3, False, "warm-pool")
    assert cfg.hosts == {"a.b": "127.0.0.1"}
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--cores-comm", "0"])


def test_log_app_manifest(tmp_path, node, stub):
    from flowfaas.fixtures import logproc
    path = tmp_path / "logs.json"
    path.write_text(json.dumps(logproc.manifest()))
    node.preload(path)
    tok = logproc.token_item("t", f"{stub.base}/auth")
    res = node.invoke("RenderLogs", [one("AccessToken", tok.data, "t")])
    assert res.set("HTMLOutput").items[0].data.count(b'class="log"') == 4
