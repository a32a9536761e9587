"""In-process twins of some C fixtures, for the trusted backend."""

import time

from ..data import DataItem
from . import decode_matrix, encode_matrix

_marker = {"set": False}


def echo(inputs):
    return {name: list(s.items) for name, s in inputs.items()}


def matmul(inputs):
    a = decode_matrix(inputs["A"].items[0].data)
    b = decode_matrix(inputs["B"].items[0].data)
    cols = len(b[0]) if b else 0
    c = [[sum(row[k] * b[k][j] for k in range(len(b))) for j in range(cols)] for row in a]
    return {"C": [DataItem("C", b"", encode_matrix(c))]}


def marker(inputs):
    state = "residue" if _marker["set"] else "clean"
    _marker["set"] = True
    return {"State": [DataItem("state", b"", state.encode())]}


def sleep(inputs):
    ms = int(inputs["Duration"].items[0].data or b"0")
    time.sleep(ms / 1000)
    return {"Done": [DataItem("done", b"", b"ok")]}


def boom(inputs):
    raise RuntimeError("boom")


def count(inputs):
    """Emit one item per input item of every set, keyed like the input."""
    out = []
    for name, s in sorted(inputs.items()):
        for item in s:
            out.append(DataItem(f"{name}.{item.ident}", item.key, item.data))
    return {"Out": out}
