"""Dataflow values and function metadata."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MiB = 1 << 20

DEFAULT_MEMORY_CAPACITY = 64 * MiB
DEFAULT_TIMEOUT = 10.0


class Kind(str, enum.Enum):
    COMPUTE = "compute"
    COMMUNICATION = "communication"
    COMPOSITION = "composition"


class Backend(str, enum.Enum):
    SUBPROCESS = "subprocess"
    INPROCESS = "in-process"


@dataclass(frozen=True)
class DataItem:
    ident: str
    key: bytes = b""
    data: bytes = b""

    def __post_init__(self):
        # Accept str payloads for convenience; store bytes.
        if isinstance(self.key, str):
            object.__setattr__(self, "key", self.key.encode())
        if isinstance(self.data, str):
            object.__setattr__(self, "data", self.data.encode())


@dataclass(frozen=True)
class DataSet:
    name: str
    items: tuple[DataItem, ...] = ()

    def __init__(self, name: str, items: Iterable[DataItem] = ()):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "items", tuple(items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def idents(self):
        return [item.ident for item in self.items]

    def check_unique(self):
        seen = set()
        for item in self.items:
            if item.ident in seen:
                raise ValueError(f"duplicate item ident {item.ident!r} in set {self.name!r}")
            seen.add(item.ident)


def error_item(diagnostic: str) -> DataItem:
    """The item synthesized when a function instance fails."""
    return DataItem("error", b"", diagnostic.encode("utf-8", "replace"))


def sets_by_name(sets: Sequence[DataSet]) -> dict[str, DataSet]:
    out = {}
    for s in sets:
        if s.name in out:
            raise ValueError(f"duplicate set name {s.name!r}")
        out[s.name] = s
    return out


@dataclass(frozen=True)
class InputDecl:
    name: str
    optional: bool = False


@dataclass
class FunctionSpec:
    name: str
    kind: Kind = Kind.COMPUTE
    input_sets: list[InputDecl] = field(default_factory=list)
    output_sets: list[str] = field(default_factory=list)
    memory_capacity: int = DEFAULT_MEMORY_CAPACITY
    timeout: float = DEFAULT_TIMEOUT
    backend: Backend = Backend.SUBPROCESS
    code_ref: str | None = None

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.backend = Backend(self.backend)
        self.input_sets = [d if isinstance(d, InputDecl) else _decl(d) for d in self.input_sets]
        self.output_sets = list(self.output_sets)
        if self.kind is Kind.COMPUTE and self.memory_capacity <= 0:
            raise ValueError("memory_capacity must be positive for compute functions")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        names = [d.name for d in self.input_sets]
        if len(set(names)) != len(names) or len(set(self.output_sets)) != len(self.output_sets):
            raise ValueError(f"duplicate set declaration in {self.name!r}")

    def input_names(self):
        return [d.name for d in self.input_sets]

    def input_decl(self, name):
        for d in self.input_sets:
            if d.name == name:
                return d
        return None

    @classmethod
    def from_json(cls, obj: dict) -> "FunctionSpec":
        """Build from the JSON shape accepted by the registration endpoint."""
        if not isinstance(obj, dict) or "name" not in obj:
            raise ValueError("spec must be an object with a 'name'")
        return cls(
            name=str(obj["name"]),
            kind=obj.get("kind", "compute"),
            input_sets=[_decl(d) for d in obj.get("input_sets", [])],
            output_sets=[str(s) for s in obj.get("output_sets", [])],
            memory_capacity=int(obj.get("memory_capacity", DEFAULT_MEMORY_CAPACITY)),
            timeout=float(obj.get("timeout", DEFAULT_TIMEOUT)),
            backend=obj.get("backend", "subprocess"),
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "input_sets": [{"name": d.name, "optional": d.optional} for d in self.input_sets],
            "output_sets": list(self.output_sets),
            "memory_capacity": self.memory_capacity,
            "timeout": self.timeout,
            "backend": self.backend.value,
            "code_ref": self.code_ref,
        }


def _decl(d) -> InputDecl:
    if isinstance(d, InputDecl):
        return d
    if isinstance(d, str):
        return InputDecl(d)
    if isinstance(d, (tuple, list)):
        return InputDecl(str(d[0]), bool(d[1]))
    if isinstance(d, dict):
        return InputDecl(str(d["name"]), bool(d.get("optional", False)))
    raise ValueError(f"bad input set declaration {d!r}")
