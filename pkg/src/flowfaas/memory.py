"""Capacity-accounted memory contexts.

A context reserves its full capacity against the node-wide committed-memory
gauge at creation, even though the backing buffer only grows as data is
written (the analogue of demand paging).
"""

from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass
from typing import Sequence

from . import abi
from .abi import BlobLayout, ItemLayout
from .data import DataSet
from .errors import (AdmissionError, ContextOverflowError, ContextStateError,
                     FlowError)


class MemoryGauge:
    """Committed-memory gauge, safe under concurrent update."""

    def __init__(self, limit: int | None = None):
        self.limit = limit
        self._lock = threading.Lock()
        self._value = 0
        self._peak = 0
        self._live = 0

    def reserve(self, nbytes: int):
        with self._lock:
            if self.limit is not None and self._value + nbytes > self.limit:
                raise AdmissionError(
                    f"committing {nbytes} bytes would exceed node limit "
                    f"({self._value} of {self.limit} in use)")
            self._value += nbytes
            self._live += 1
            self._peak = max(self._peak, self._value)

    def release(self, nbytes: int):
        with self._lock:
            self._value -= nbytes
            self._live -= 1
            assert self._value >= 0, "gauge went negative"

    @property
    def value(self) -> int:
        return self._value

    @property
    def peak(self) -> int:
        return self._peak

    @property
    def live(self) -> int:
        return self._live


class ContextState(str, enum.Enum):
    RESERVED = "reserved"
    POPULATED = "populated"
    CONSUMED = "consumed"
    RELEASED = "released"


_ids = itertools.count(1)


class MemoryContext:
    """Bounded region addressed by offset; append-only layout allocation."""

    def __init__(self, capacity: int, gauge: MemoryGauge | None = None,
                 label: str = "", accounted: bool = True):
        if capacity <= 0:
            raise ValueError("context capacity must be positive")
        self.id = next(_ids)
        self.capacity = capacity
        self.label = label
        self.state = ContextState.RESERVED
        self.layout: BlobLayout | None = None
        self._gauge = gauge if accounted else None
        if self._gauge is not None:
            self._gauge.reserve(capacity)
        self._buf = bytearray()

    def __repr__(self):
        return (f"<MemoryContext #{self.id} {self.label} {self.used}/{self.capacity}"
                f" {self.state.value}>")

    @property
    def used(self) -> int:
        return len(self._buf)

    @property
    def remaining(self) -> int:
        return self.capacity - len(self._buf)

    def _check_live(self):
        if self.state is ContextState.RELEASED:
            raise ContextStateError(f"context #{self.id} already released")

    def write(self, offset: int, data: bytes):
        self._check_live()
        if offset < 0:
            raise ValueError("negative offset")
        end = offset + len(data)
        if end > self.capacity:
            raise ContextOverflowError(end, self.capacity)
        if end > len(self._buf):
            self._buf.extend(bytes(end - len(self._buf)))
        self._buf[offset:end] = data
        if self.state is ContextState.RESERVED:
            self.state = ContextState.POPULATED

    def read(self, offset: int, length: int) -> bytes:
        self._check_live()
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise ValueError(f"read [{offset}, {offset + length}) outside capacity {self.capacity}")
        chunk = bytes(self._buf[offset:offset + length])
        return chunk + bytes(length - len(chunk))

    def append(self, data: bytes) -> int:
        self._check_live()
        if len(data) > self.remaining:
            raise ContextOverflowError(len(data), self.remaining)
        off = len(self._buf)
        self._buf.extend(data)
        if self.state is ContextState.RESERVED:
            self.state = ContextState.POPULATED
        return off

    def view(self, offset: int = 0, end: int | None = None) -> memoryview:
        self._check_live()
        return memoryview(self._buf)[offset:end]

    def write_sets(self, sets: Sequence[DataSet]) -> BlobLayout:
        """Serialize ``sets`` at the end of the region; returns their layout."""
        blob = abi.encode(sets)
        if len(blob) > self.remaining:
            raise ContextOverflowError(len(blob), self.remaining)
        off = self.append(blob)
        self.layout = abi.parse_layout(self._buf, off, off + len(blob))
        return self.layout

    def write_blob(self, blob: bytes) -> BlobLayout:
        """Append an already-encoded blob after validating it."""
        layout = abi.parse_layout(blob)
        if len(blob) > self.remaining:
            raise ContextOverflowError(len(blob), self.remaining)
        off = self.append(blob)
        self.layout = _shift(layout, off)
        return self.layout

    def read_sets(self, layout: BlobLayout | None = None) -> list[DataSet]:
        self._check_live()
        layout = layout or self.layout
        if layout is None:
            return []
        return abi.materialize(self._buf, layout)

    def blob(self, layout: BlobLayout | None = None) -> bytes:
        layout = layout or self.layout
        return bytes(self._buf[layout.offset:layout.offset + layout.length])

    def item_record(self, item: ItemLayout, ident: str | None = None) -> bytes:
        """Copy one item out as a wire-format record, optionally renamed."""
        self._check_live()
        key = bytes(self._buf[item.key_offset:item.key_offset + item.key_len])
        data = bytes(self._buf[item.data_offset:item.data_offset + item.data_len])
        return abi.item_bytes(item.ident if ident is None else ident, key, data)

    def reset(self):
        """Drop the contents but keep the reservation (inputs -> outputs)."""
        self._check_live()
        self._buf = bytearray()
        self.layout = None

    def mark_consumed(self):
        self._check_live()
        self.state = ContextState.CONSUMED

    def release(self):
        if self.state is ContextState.RELEASED:
            raise ContextStateError(f"double release of context #{self.id}")
        self.state = ContextState.RELEASED
        self._buf = bytearray()
        if self._gauge is not None:
            self._gauge.release(self.capacity)


def _shift(layout: BlobLayout, delta: int) -> BlobLayout:
    return BlobLayout(layout.offset + delta, layout.length, tuple(
        abi.SetLayout(s.name, s.offset + delta, tuple(
            ItemLayout(i.ident, i.key_offset + delta, i.key_len,
                       i.data_offset + delta, i.data_len) for i in s.items))
        for s in layout.sets))


@dataclass(frozen=True)
class ItemRef:
    """One item living in some context, optionally renamed on copy."""

    ctx: MemoryContext
    item: ItemLayout
    ident: str | None = None

    @property
    def name(self):
        return self.item.ident if self.ident is None else self.ident

    @property
    def size(self):
        return abi.item_size(self.name, self.item.key_len, self.item.data_len)


@dataclass(frozen=True)
class SetSelection:
    """A set to materialize in the destination, built from item references."""

    name: str
    items: Sequence[ItemRef]

    @property
    def size(self):
        return 4 + len(self.name.encode()) + 4 + sum(r.size for r in self.items)


def build_input_blob(dst: MemoryContext, selections: Sequence[SetSelection]) -> BlobLayout:
    """Copy the selected items (possibly from many contexts) into ``dst``
    as one complete wire-format blob. Nothing is written on overflow."""
    total = abi.HEADER_SIZE + sum(s.size for s in selections)
    if total > dst.remaining:
        raise ContextOverflowError(total, dst.remaining)
    for sel in selections:
        for ref in sel.items:
            if ref.ctx is dst:
                raise FlowError("source and destination context alias")
    start = dst.append(abi.header(len(selections)))
    for sel in selections:
        dst.append(abi.set_header(sel.name, len(sel.items)))
        for ref in sel.items:
            dst.append(ref.ctx.item_record(ref.item, ref.ident))
    dst.layout = abi.parse_layout(dst.view(), start, start + total)
    return dst.layout


def context_transfer(src: MemoryContext, selection, dst: MemoryContext) -> list:
    """Copy whole sets (or item subsets) out of ``src``'s current blob and
    append them to ``dst`` as set records.

    ``selection`` is a list of set names or ``(set_name, item_indices)``
    pairs; ``item_indices`` of None selects every item. Returns the offsets
    at which each set record was written. ``src`` is left untouched.
    """
    if src is dst:
        raise FlowError("self-transfer would alias source and destination")
    src._check_live()
    dst._check_live()
    if src.state is ContextState.RESERVED or src.layout is None:
        raise ContextStateError("source context holds no sets")
    records = []
    for entry in selection:
        name, idx = (entry, None) if isinstance(entry, str) else entry
        layout = src.layout.set(name)
        items = layout.items if idx is None else [layout.items[i] for i in idx]
        records.append(abi.set_header(name, len(items))
                       + b"".join(src.item_record(i) for i in items))
    need = sum(len(r) for r in records)
    if need > dst.remaining:
        raise ContextOverflowError(need, dst.remaining)
    return [dst.append(r) for r in records]
