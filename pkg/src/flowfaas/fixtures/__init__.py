"""Test and benchmark functions.

The C fixtures are compiled into static executables that speak the set/item
stream on stdin/stdout; ``logproc`` holds trusted in-process functions for
the log-processing composition.
"""

from __future__ import annotations

import struct
from pathlib import Path

from ..data import Backend, FunctionSpec, InputDecl, MiB
from ..sandbox import compile_c

HERE = Path(__file__).parent

C_FIXTURES = {
    # name: (input sets, output sets)
    "echo": (["In"], ["In"]),
    "matmul": (["A", "B"], ["C"]),
    "marker": (["In"], ["State"]),
    "spin": (["Duration"], ["Done"]),
    "loop": (["In"], ["Out"]),
    "forbidden": (["In"], ["Out"]),
    "fail": (["In"], ["Out"]),
    "garbage": (["In"], ["Out"]),
    "bloat": (["In"], ["Out"]),
}


def fixture_path(name: str) -> Path:
    if name not in C_FIXTURES:
        raise KeyError(f"unknown fixture {name!r}")
    return compile_c(HERE / f"{name}.c", static=True, include=HERE)


def fixture_binary(name: str) -> bytes:
    return fixture_path(name).read_bytes()


def fixture_spec(name: str, *, as_name: str | None = None, inputs=None, outputs=None,
                 memory_capacity: int = 4 * MiB, timeout: float = 10.0) -> FunctionSpec:
    ins, outs = C_FIXTURES[name]
    return FunctionSpec(
        name=as_name or name,
        input_sets=[InputDecl(s) for s in (inputs or ins)],
        output_sets=list(outputs or outs),
        memory_capacity=memory_capacity, timeout=timeout,
        backend=Backend.SUBPROCESS)


def encode_matrix(rows) -> bytes:
    """rows:u32 | cols:u32 | int64 row-major, little-endian."""
    r = len(rows)
    c = len(rows[0]) if r else 0
    flat = [v for row in rows for v in row]
    return struct.pack(f"<II{len(flat)}q", r, c, *flat)


def decode_matrix(data: bytes):
    r, c = struct.unpack_from("<II", data)
    flat = struct.unpack_from(f"<{r * c}q", data, 8)
    return [list(flat[i * c:(i + 1) * c]) for i in range(r)]
