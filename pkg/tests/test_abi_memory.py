import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowfaas import abi
from flowfaas.data import DataItem, DataSet
from flowfaas.errors import (AbiError, AdmissionError, ContextOverflowError,
                             ContextStateError, FlowError)
from flowfaas.memory import (ItemRef, MemoryContext, MemoryGauge, SetSelection,
                             build_input_blob, context_transfer)

items = st.builds(DataItem, st.text(max_size=8), st.binary(max_size=8), st.binary(max_size=64))
datasets = st.builds(DataSet, st.text(min_size=1, max_size=8), st.lists(items, max_size=4))


@settings(max_examples=200, deadline=None)
@given(st.lists(datasets, max_size=4))
def test_encode_decode_round_trip(sets):
    blob = abi.encode(sets)
    assert len(blob) == abi.encoded_size(sets)
    assert abi.decode(blob) == sets


@settings(max_examples=100, deadline=None)
@given(st.lists(datasets, min_size=1, max_size=3), st.data())
def test_truncation_always_detected(sets, data):
    blob = abi.encode(sets)
    cut = data.draw(st.integers(0, len(blob) - 1))
    with pytest.raises(AbiError):
        abi.decode(blob[:cut])


def test_bad_magic_version_and_trailing():
    blob = abi.encode([DataSet("A")])
    with pytest.raises(AbiError, match="magic"):
        abi.decode(b"XXXX" + blob[4:])
    with pytest.raises(AbiError, match="version"):
        abi.decode(blob[:4] + b"\x02\x00\x00\x00" + blob[8:])
    with pytest.raises(AbiError, match="trailing"):
        abi.decode(blob + b"\x00")


def test_context_reserves_full_capacity():
    g = MemoryGauge()
    ctx = MemoryContext(1 << 20, g)
    assert g.value == 1 << 20 and ctx.used == 0
    ctx.write_sets([DataSet("A", [DataItem("i", b"", b"x" * 10)])])
    assert g.value == 1 << 20
    ctx.release()
    assert g.value == 0 and g.live == 0


def test_double_release_raises():
    ctx = MemoryContext(16)
    ctx.release()
    with pytest.raises(ContextStateError):
        ctx.release()
    with pytest.raises(ContextStateError):
        ctx.read(0, 1)


def test_write_past_capacity():
    ctx = MemoryContext(8)
    with pytest.raises(ContextOverflowError):
        ctx.write(4, b"12345")
    with pytest.raises(ContextOverflowError):
        ctx.write_sets([DataSet("A")])
    assert ctx.used == 0


def test_admission_limit():
    g = MemoryGauge(100)
    a = MemoryContext(60, g)
    with pytest.raises(AdmissionError):
        MemoryContext(60, g)
    a.release()
    MemoryContext(60, g).release()


def test_unaccounted_context_skips_gauge():
    g = MemoryGauge()
    ctx = MemoryContext(100, g, accounted=False)
    assert g.value == 0
    ctx.release()
    assert g.value == 0


def test_gauge_concurrent_updates():
    g = MemoryGauge()

    def churn():
        for _ in range(2000):
            g.reserve(3)
            g.release(3)

    ts = [threading.Thread(target=churn) for _ in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert g.value == 0 and g.peak <= 12


def test_build_input_blob_from_several_contexts():
    a = MemoryContext(1024)
    b = MemoryContext(1024)
    la = a.write_sets([DataSet("X", [DataItem("p", b"k1", b"one"), DataItem("q", b"", b"two")])])
    lb = b.write_sets([DataSet("Y", [DataItem("p", b"", b"three")])])
    dst = MemoryContext(1024)
    build_input_blob(dst, [
        SetSelection("In", [ItemRef(a, la.sets[0].items[1]), ItemRef(b, lb.sets[0].items[0], "p#1")]),
        SetSelection("Empty", []),
    ])
    assert dst.read_sets() == [
        DataSet("In", [DataItem("q", b"", b"two"), DataItem("p#1", b"", b"three")]),
        DataSet("Empty")]
    # sources untouched
    assert a.read_sets()[0].items[0].data == b"one"


def test_build_input_blob_overflow_writes_nothing():
    a = MemoryContext(1024)
    la = a.write_sets([DataSet("X", [DataItem("p", b"", b"x" * 100)])])
    dst = MemoryContext(64)
    with pytest.raises(ContextOverflowError):
        build_input_blob(dst, [SetSelection("X", [ItemRef(a, la.sets[0].items[0])])])
    assert dst.used == 0


def test_context_transfer_selection_and_alias():
    src = MemoryContext(1024)
    src.write_sets([DataSet("A", [DataItem("a", b"", b"1"), DataItem("b", b"", b"2")]),
                    DataSet("B", [DataItem("c", b"", b"3")])])
    dst = MemoryContext(1024)
    offs = context_transfer(src, ["B", ("A", [1])], dst)
    assert offs[0] == 0
    blob = abi.header(2) + bytes(dst.view())
    assert abi.decode(blob) == [DataSet("B", [DataItem("c", b"", b"3")]),
                                DataSet("A", [DataItem("b", b"", b"2")])]
    with pytest.raises(FlowError):
        context_transfer(src, ["A"], src)


def test_reset_keeps_reservation():
    g = MemoryGauge()
    ctx = MemoryContext(100, g)
    ctx.write(0, b"abc")
    ctx.reset()
    assert ctx.used == 0 and g.value == 100
