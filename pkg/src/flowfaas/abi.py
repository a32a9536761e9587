"""Binary set/item wire format exchanged with compute functions.

Layout (little-endian)::

    b"DNDL" | version:u32 | set_count:u32
    per set:  name_len:u32 | name | item_count:u32
    per item: ident_len:u32 | ident | key_len:u32 | key | data_len:u64 | data

The same layout is used for a function's input and its output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .data import DataItem, DataSet
from .errors import AbiError

MAGIC = b"DNDL"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HEADER = struct.Struct("<4sII")

HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class ItemLayout:
    ident: str
    key_offset: int
    key_len: int
    data_offset: int
    data_len: int


@dataclass(frozen=True)
class SetLayout:
    name: str
    offset: int
    items: tuple[ItemLayout, ...]


@dataclass(frozen=True)
class BlobLayout:
    offset: int
    length: int
    sets: tuple[SetLayout, ...]

    def set(self, name):
        for s in self.sets:
            if s.name == name:
                return s
        raise KeyError(name)


def header(set_count: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, set_count)


def set_header(name: str, item_count: int) -> bytes:
    raw = name.encode("utf-8")
    return _U32.pack(len(raw)) + raw + _U32.pack(item_count)


def item_bytes(ident: str, key: bytes, data: bytes) -> bytes:
    raw = ident.encode("utf-8")
    return b"".join((_U32.pack(len(raw)), raw, _U32.pack(len(key)), key,
                     _U64.pack(len(data)), data))


def item_size(ident: str, key_len: int, data_len: int) -> int:
    return 4 + len(ident.encode("utf-8")) + 4 + key_len + 8 + data_len


def set_size(s: DataSet) -> int:
    return 4 + len(s.name.encode("utf-8")) + 4 + sum(
        item_size(i.ident, len(i.key), len(i.data)) for i in s.items)


def encoded_size(sets: Sequence[DataSet]) -> int:
    return HEADER_SIZE + sum(set_size(s) for s in sets)


def encode(sets: Sequence[DataSet]) -> bytes:
    parts = [header(len(sets))]
    for s in sets:
        parts.append(set_header(s.name, len(s.items)))
        for it in s.items:
            parts.append(item_bytes(it.ident, it.key, it.data))
    return b"".join(parts)


def parse_layout(buf, offset: int = 0, end: int | None = None) -> BlobLayout:
    """Walk a blob in ``buf[offset:end]`` and return absolute offsets.

    Raises AbiError on truncation, bad magic/version, or trailing bytes.
    """
    mv = memoryview(buf)
    end = len(mv) if end is None else end
    pos = offset

    def need(n):
        if pos + n > end:
            raise AbiError(f"truncated blob at offset {pos - offset} (need {n} bytes)")

    def u32():
        nonlocal pos
        need(4)
        (v,) = _U32.unpack_from(mv, pos)
        pos += 4
        return v

    def text(n):
        nonlocal pos
        need(n)
        try:
            s = bytes(mv[pos:pos + n]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise AbiError(f"invalid UTF-8 name at offset {pos - offset}") from exc
        pos += n
        return s

    need(HEADER_SIZE)
    magic, version, set_count = _HEADER.unpack_from(mv, pos)
    if magic != MAGIC:
        raise AbiError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise AbiError(f"unsupported version {version}")
    pos += HEADER_SIZE
    sets = []
    for _ in range(set_count):
        set_off = pos
        name = text(u32())
        count = u32()
        items = []
        for _ in range(count):
            ident = text(u32())
            key_len = u32()
            need(key_len)
            key_off = pos
            pos += key_len
            need(8)
            (data_len,) = _U64.unpack_from(mv, pos)
            pos += 8
            need(data_len)
            items.append(ItemLayout(ident, key_off, key_len, pos, data_len))
            pos += data_len
        sets.append(SetLayout(name, set_off, tuple(items)))
    if pos != end:
        raise AbiError(f"{end - pos} trailing bytes after last set")
    return BlobLayout(offset, end - offset, tuple(sets))


def materialize(buf, layout: BlobLayout) -> list[DataSet]:
    mv = memoryview(buf)
    out = []
    for s in layout.sets:
        out.append(DataSet(s.name, [
            DataItem(i.ident,
                     bytes(mv[i.key_offset:i.key_offset + i.key_len]),
                     bytes(mv[i.data_offset:i.data_offset + i.data_len]))
            for i in s.items]))
    return out


def decode(blob: bytes) -> list[DataSet]:
    return materialize(blob, parse_layout(blob))
