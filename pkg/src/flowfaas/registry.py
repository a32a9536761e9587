"""In-memory function/composition registry."""

from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path

from .data import FunctionSpec, InputDecl, Kind
from .errors import KindMismatchError, RegistryError, UnknownNameError


def content_hash(binary: bytes) -> str:
    return hashlib.sha256(binary).hexdigest()


class FunctionRegistry:
    """Name -> spec, code_ref -> binary, name -> composition IR.

    Readers never lock (single dict lookups are atomic); writers serialize on
    one lock and publish replacements with a single assignment. When
    ``store_dir`` is given, binaries are also persisted there so loaders can
    read them back from disk.
    """

    def __init__(self, store_dir: str | os.PathLike | None = None):
        self._lock = threading.Lock()
        self._specs: dict[str, FunctionSpec] = {}
        self._binaries: dict[str, bytes] = {}
        self._compositions: dict = {}
        self.store_dir = Path(store_dir) if store_dir is not None else None
        if self.store_dir is not None:
            self.store_dir.mkdir(parents=True, exist_ok=True)

    def register_function(self, spec: FunctionSpec, binary: bytes = b"",
                          *, platform: bool = False) -> str:
        if spec.kind is Kind.COMPOSITION:
            raise KindMismatchError("use register_composition for compositions")
        if spec.kind is Kind.COMMUNICATION and not platform:
            raise KindMismatchError(
                "communication functions are provided by the platform only")
        code_ref = content_hash(binary)
        with self._lock:
            current = self._specs.get(spec.name)
            if current is not None and current.kind is not spec.kind:
                raise KindMismatchError(
                    f"{spec.name!r} is already registered as {current.kind.value}")
            if current is not None and current.kind is Kind.COMMUNICATION and not platform:
                raise KindMismatchError(f"{spec.name!r} is a platform function")
            if self.store_dir is not None and code_ref not in self._binaries:
                tmp = self.store_dir / f".{code_ref}.tmp"
                tmp.write_bytes(binary)
                os.replace(tmp, self.store_dir / code_ref)
            self._binaries[code_ref] = binary
            spec.code_ref = code_ref
            self._specs[spec.name] = spec
        return code_ref

    def register_composition(self, name: str, ir) -> None:
        spec = FunctionSpec(
            name=name, kind=Kind.COMPOSITION,
            input_sets=[InputDecl(s) for s in ir.source_sets],
            output_sets=list(ir.sink_sets))
        with self._lock:
            current = self._specs.get(name)
            if current is not None and current.kind is not Kind.COMPOSITION:
                raise KindMismatchError(
                    f"{name!r} is already registered as {current.kind.value}")
            self._compositions[name] = ir
            self._specs[name] = spec

    def lookup(self, name: str, kind: Kind | None = None):
        """FunctionSpec for functions, the IR for compositions."""
        spec = self.spec(name)
        if kind is not None and spec.kind is not Kind(kind):
            raise KindMismatchError(f"{name!r} is {spec.kind.value}, not {Kind(kind).value}")
        if spec.kind is Kind.COMPOSITION:
            return self._compositions[name]
        return spec

    def spec(self, name: str) -> FunctionSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownNameError(f"unknown function or composition {name!r}") from None

    def composition(self, name: str):
        return self.lookup(name, Kind.COMPOSITION)

    def __contains__(self, name):
        return name in self._specs

    def names(self, kind: Kind | None = None):
        return sorted(n for n, s in self._specs.items() if kind is None or s.kind is Kind(kind))

    def binary(self, code_ref: str) -> bytes:
        try:
            return self._binaries[code_ref]
        except KeyError:
            raise UnknownNameError(f"unknown code_ref {code_ref}") from None

    def read_from_store(self, code_ref: str) -> bytes:
        """Read a binary back from the on-disk store (falls back to memory)."""
        if self.store_dir is None:
            return self.binary(code_ref)
        path = self.store_dir / code_ref
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise RegistryError(f"binary {code_ref} missing from store") from None
