"""Function binary cache shared by compute engines."""

from __future__ import annotations

import importlib
import os
import stat
import threading
from dataclasses import dataclass
from pathlib import Path

from ..sandbox import cache_dir


@dataclass(frozen=True)
class LoadedFunction:
    code_ref: str
    binary: bytes
    path: Path | None      # executable on disk (subprocess backend)
    source: str            # "disk" or "cache"
    target: object = None  # resolved callable (in-process backend)


class BinaryCache:
    """Unbounded code_ref -> LoadedFunction cache.

    Lookups are lock-free dict reads; inserts serialize on a lock. A miss
    reads the binary back from the registry store and, for executables,
    materializes it as a file the launcher can exec.
    """

    def __init__(self, registry, exec_dir: str | os.PathLike | None = None):
        self.registry = registry
        self.exec_dir = Path(exec_dir) if exec_dir else cache_dir() / "bin"
        self.exec_dir.mkdir(parents=True, exist_ok=True)
        self._entries: dict[str, LoadedFunction] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def load(self, code_ref: str, *, executable: bool = True) -> LoadedFunction:
        entry = self._entries.get(code_ref)
        if entry is not None:
            self.hits += 1
            return LoadedFunction(entry.code_ref, entry.binary, entry.path, "cache", entry.target)
        binary = self.registry.read_from_store(code_ref)
        path = target = None
        if executable:
            path = self.exec_dir / code_ref
            if not path.exists():
                tmp = path.with_name(f".{code_ref}.{threading.get_ident()}.tmp")
                tmp.write_bytes(binary)
                tmp.chmod(stat.S_IRWXU)
                os.replace(tmp, path)
        else:
            target = resolve_callable(binary)
        entry = LoadedFunction(code_ref, binary, path, "disk", target)
        with self._lock:
            self.misses += 1
            self._entries.setdefault(code_ref, entry)
        return entry

    def drop(self, code_ref: str | None = None):
        """Test/bench hook: forget one entry (or all) so the next load hits disk."""
        with self._lock:
            if code_ref is None:
                self._entries.clear()
            else:
                self._entries.pop(code_ref, None)

    def __contains__(self, code_ref):
        return code_ref in self._entries


def resolve_callable(ref: bytes):
    """``b"package.module:attr"`` -> the callable it names."""
    text = ref.decode("utf-8").strip()
    module, _, attr = text.partition(":")
    if not module or not attr:
        raise ValueError(f"in-process binary must be 'module:attr', got {text!r}")
    obj = importlib.import_module(module)
    for part in attr.split("."):
        obj = getattr(obj, part)
    if not callable(obj):
        raise TypeError(f"{text} is not callable")
    return obj
