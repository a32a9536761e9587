"""Building and probing the trusted launcher that confines compute functions."""

from __future__ import annotations

import functools
import hashlib
import logging
import os
import shutil
import subprocess
import tempfile
from pathlib import Path

log = logging.getLogger(__name__)

LAUNCHER_SOURCE = Path(__file__).with_name("launcher.c")

ENFORCED = "enforced"
BEST_EFFORT = "best-effort"
NONE = "none"


def cache_dir() -> Path:
    root = os.environ.get("FLOWFAAS_CACHE")
    path = Path(root) if root else Path(tempfile.gettempdir()) / f"flowfaas-cache-{os.getuid()}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def compiler() -> str | None:
    return os.environ.get("CC") or shutil.which("cc") or shutil.which("gcc")


def compile_c(source: Path, *, static: bool, include: Path | None = None) -> Path:
    """Compile ``source`` into the cache, keyed by its content and flags."""
    cc = compiler()
    if cc is None:
        raise RuntimeError("no C compiler available")
    flags = ["-O2", "-w"] + (["-static"] if static else [])
    h = hashlib.sha256(source.read_bytes())
    if include is not None:
        for hdr in sorted(include.glob("*.h")):
            h.update(hdr.read_bytes())
        flags += ["-I", str(include)]
    h.update(" ".join(flags).encode())
    out = cache_dir() / f"{source.stem}-{h.hexdigest()[:16]}"
    if out.exists():
        return out
    tmp = out.with_name(out.name + f".{os.getpid()}.tmp")
    proc = subprocess.run([cc, *flags, "-o", str(tmp), str(source)],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"compiling {source.name} failed:\n{proc.stderr}")
    os.replace(tmp, out)
    return out


@functools.lru_cache(maxsize=None)
def launcher() -> Path | None:
    """Path of the compiled launcher, or None if it cannot be built/used."""
    if os.environ.get("FLOWFAAS_NO_SECCOMP"):
        return None
    try:
        path = compile_c(LAUNCHER_SOURCE, static=False)
    except (RuntimeError, OSError) as exc:
        log.warning("sandbox launcher unavailable: %s", exc)
        return None
    probe = subprocess.run([str(path), "--probe"], capture_output=True)
    if probe.returncode != 0:
        log.warning("seccomp probe failed: %s", probe.stderr.decode(errors="replace").strip())
        return None
    return path


def syscall_blocking() -> str:
    """Capability report for the subprocess backend."""
    return ENFORCED if launcher() is not None else NONE
