import asyncio
import time

import pytest

from flowfaas.data import DataItem, DataSet
from flowfaas.engines.comm import CommRunner, execute_http, valid_host, validate
from flowfaas.errors import ValidationError

from conftest import free_port
from http_cases import REJECT, CountingConnector

HTTP_ONLY = "composition Fetch(Req) => Resp { HTTP(Request = each Req) => (Resp = Response); }"


def req(url, method="GET", extra=b""):
    return DataItem("r", b"", f"{method} {url} HTTP/1.1\r\n".encode() + extra + b"\r\n")


def test_validate_good_request():
    r = validate(DataItem("r", b"", b"POST http://Example.com:8081/a/b?x=1 HTTP/1.0\r\n"
                                     b"X-A: 1\r\n\r\nbody"))
    assert (r.method, r.host, r.port, r.target, r.version) == (
        "POST", "Example.com", 8081, "/a/b?x=1", "HTTP/1.0")
    assert r.headers == [("X-A", "1")] and r.body == b"body"
    wire = r.wire()
    assert wire.startswith(b"POST /a/b?x=1 HTTP/1.0\r\nHost: Example.com:8081\r\n"
                           b"Connection: close\r\nX-A: 1\r\n\r\nbody")


def test_validate_defaults_and_ipv6():
    r = validate(req("http://[::1]"))
    assert (r.host, r.port, r.target) == ("::1", 80, "/")
    assert validate(req("http://10.0.0.1:1/")).port == 1
    assert b"Host: [::1]:80" in r.wire()


def test_existing_host_header_kept():
    r = validate(req("http://a.b/", extra=b"Host: other\r\n"))
    assert r.wire().count(b"Host:") == 1


@pytest.mark.parametrize("payload", REJECT, ids=range(len(REJECT)))
def test_rejections(payload):
    with pytest.raises(ValidationError):
        validate(DataItem("r", b"", payload))


def test_valid_host():
    assert valid_host("a-b.c") and valid_host("localhost") and valid_host("1.2.3.4")
    assert valid_host("example.com.")
    assert not valid_host("a" * 64 + ".com") and not valid_host("1.2.3")


def test_rejected_items_never_connect():
    conn = CountingConnector()
    runner = CommRunner(connector=conn)

    async def run():
        return [await runner.handle(DataItem("r", b"", p), time.monotonic() + 1) for p in REJECT]

    out = asyncio.run(run())
    assert conn.calls == []
    assert all(o.ident == "error" and o.data.startswith(b"invalid request") for o in out)


def invoke_fetch(node, urls):
    node.register_composition(HTTP_ONLY)
    items = [DataItem(f"r{i}", b"", f"GET {u} HTTP/1.1\r\n\r\n".encode()) for i, u in enumerate(urls)]
    return node.invoke("Fetch", [DataSet("Req", items)]).set("Resp").items


def test_ok_and_missing(node, stub):
    ok, missing = invoke_fetch(node, [f"{stub.base}/ok", f"{stub.base}/missing"])
    assert ok.data.startswith(b"HTTP/1.1 200") and ok.ident == "r0"
    assert missing.data.startswith(b"HTTP/1.1 404 Not Found")


def test_payload_is_verbatim(node, stub):
    (resp,) = invoke_fetch(node, [f"{stub.base}/logs/2"])
    assert resp.data == stub.stub.emitted[-1]


def test_connection_refused(node):
    port = free_port()
    (resp,) = invoke_fetch(node, [f"http://127.0.0.1:{port}/"])
    assert resp.ident == "error" and b"connection refused" in resp.data


def test_deadline(node, stub):
    item = DataItem("r", b"", f"GET {stub.base}/delay/2000 HTTP/1.1\r\n\r\n".encode())

    async def run():
        return await execute_http(validate(item), time.monotonic() + 0.1)

    t = time.monotonic()
    out = asyncio.run(run())
    assert time.monotonic() - t < 0.5
    assert out.ident == "error" and b"deadline" in out.data


def test_host_override(node_factory, stub):
    node = node_factory(hosts={"logs.internal": "127.0.0.1"})
    (resp,) = invoke_fetch(node, [f"http://logs.internal:{stub.port}/ok"])
    assert resp.data.startswith(b"HTTP/1.1 200")


def test_one_engine_multiplexes(node_factory, stub):
    node = node_factory(cores_compute=1, cores_comm=1)
    t = time.monotonic()
    invoke_fetch(node, [f"{stub.base}/delay/100"])
    single = time.monotonic() - t
    t = time.monotonic()
    out = invoke_fetch(node, [f"{stub.base}/delay/100"] * 64)
    many = time.monotonic() - t
    assert all(o.data.startswith(b"HTTP/1.1 200") for o in out)
    assert many < 2 * single
