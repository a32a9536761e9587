import socket

import pytest

from flowfaas import sandbox
from flowfaas.bench.stub import StubConfig, StubThread
from flowfaas.data import DataItem, DataSet
from flowfaas.fixtures import fixture_binary, fixture_spec
from flowfaas.node import Node, NodeConfig

needs_seccomp = pytest.mark.skipif(sandbox.syscall_blocking() != sandbox.ENFORCED,
                                   reason="syscall filtering not available here")


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def node_factory():
    nodes = []

    def make(**kw):
        n = Node(NodeConfig(**kw)).start()
        nodes.append(n)
        return n

    yield make
    for n in nodes:
        n.stop()


@pytest.fixture
def node(node_factory):
    return node_factory()


@pytest.fixture
def stub():
    with StubThread(StubConfig(logs=4)) as s:
        yield s


def add_fixture(node, name, *, as_name=None, composition=True, **kw):
    """Register a C fixture plus a one-node composition ``C<name>`` around it.

    Sinks are named after the output sets; one that collides with an input
    name gets an ``Out`` suffix (echo: In -> InOut).
    """
    spec = fixture_spec(name, as_name=as_name, **kw)
    node.register_function(spec, fixture_binary(name))
    if composition:
        ins = ", ".join(f"{i} = all {i}" for i in spec.input_names())
        sinks = [o + "Out" if o in spec.input_names() else o for o in spec.output_sets]
        outs = ", ".join(f"{s} = {o}" for s, o in zip(sinks, spec.output_sets))
        node.register_composition(
            f"composition C{spec.name}({', '.join(spec.input_names())}) => "
            f"({', '.join(sinks)}) {{ {spec.name}({ins}) => ({outs}); }}")
    return spec


def one(name, data=b"", ident="x", key=b""):
    return DataSet(name, [DataItem(ident, key, data)])


class Api:
    """A node served over HTTP on its dispatcher loop."""

    def __init__(self, node, **app_kw):
        import asyncio

        from flowfaas.frontend import serve
        self.node = node
        self.port = free_port()
        self.base = f"http://127.0.0.1:{self.port}"
        self._runner = asyncio.run_coroutine_threadsafe(
            serve(node, "127.0.0.1", self.port, **app_kw), node.dispatcher.loop).result(5)

    def close(self):
        import asyncio
        asyncio.run_coroutine_threadsafe(self._runner.cleanup(), self.node.dispatcher.loop).result(5)


@pytest.fixture
def api(node):
    a = Api(node, max_binary=1 << 20)
    yield a
    a.close()


ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
