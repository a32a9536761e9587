"""The platform HTTP function: validate untrusted request items, then send them.

A request item's payload is raw HTTP/1.x request text whose request line
carries an absolute URI (``GET http://host:port/path HTTP/1.1``). Only the
request line is inspected; headers and body pass through untouched, apart
from the ``Host`` and ``Connection: close`` headers added when missing.
"""

from __future__ import annotations

import asyncio
import ipaddress
import re
import time
from dataclasses import dataclass, field

from ..data import DataItem, DataSet, error_item
from ..errors import ContextOverflowError, ValidationError
from ..queues import EngineTask, TaskResult

METHODS = frozenset({"GET", "PUT", "POST", "DELETE"})
VERSIONS = frozenset({"HTTP/1.0", "HTTP/1.1"})
MAX_IN_FLIGHT = 256
MAX_DEADLINE = 30.0
MAX_HEAD = 64 * 1024

_LABEL = re.compile(r"[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?\Z")
_NUMERIC = re.compile(r"[0-9.]+\Z")


@dataclass(frozen=True)
class ParsedHttpRequest:
    method: str
    version: str
    host: str
    port: int
    target: str                      # origin-form path + query
    headers: list = field(default_factory=list)   # [(name, value)] as sent
    body: bytes = b""
    rest: bytes = b""                # everything after the request line, verbatim

    def wire(self) -> bytes:
        """The request as sent: origin-form request line, then the original
        headers and body with Host / Connection added if absent."""
        names = {n.lower() for n, _ in self.headers}
        extra = b""
        if "host" not in names:
            host = f"[{self.host}]" if ":" in self.host else self.host
            extra += f"Host: {host}:{self.port}\r\n".encode()
        if "connection" not in names:
            extra += b"Connection: close\r\n"
        line = f"{self.method} {self.target} {self.version}\r\n".encode()
        return line + extra + self.rest


def valid_host(host: str) -> bool:
    """IP literal or RFC 1123 host name."""
    if not host:
        return False
    if _NUMERIC.match(host):
        try:
            ipaddress.IPv4Address(host)
            return True
        except ValueError:
            return False
    name = host[:-1] if host.endswith(".") else host
    if not name or len(name) > 253:
        return False
    return all(_LABEL.match(label) for label in name.split("."))


def _split_authority(authority: str):
    if not authority or "@" in authority:
        raise ValidationError("invalid host")
    if authority.startswith("["):
        end = authority.find("]")
        if end < 0:
            raise ValidationError("invalid host")
        host, tail = authority[1:end], authority[end + 1:]
        try:
            ipaddress.IPv6Address(host)
        except ValueError:
            raise ValidationError("invalid host") from None
        if tail and not tail.startswith(":"):
            raise ValidationError("invalid host")
        port_text = tail[1:] if tail else None
    else:
        host, sep, port_text = authority.partition(":")
        if not sep:
            port_text = None
        if not valid_host(host):
            raise ValidationError("invalid host")
    if port_text is None:
        return host, 80
    if not port_text.isdigit() or not 1 <= int(port_text) <= 65535:
        raise ValidationError("invalid port")
    return host, int(port_text)


def _split_headers(rest: bytes):
    head, sep, body = rest.partition(b"\r\n\r\n")
    if not sep:
        # no blank line: treat everything as headers, no body
        head, body = rest, b""
    headers = []
    for line in head.split(b"\r\n"):
        if not line:
            continue
        name, colon, value = line.partition(b":")
        if colon:
            headers.append((name.decode("latin-1").strip(), value.decode("latin-1").strip()))
    return headers, body


def validate(item: DataItem) -> ParsedHttpRequest:
    """Parse and check one request item; raises ValidationError."""
    data = bytes(item.data)
    line, crlf, rest = data.partition(b"\r\n")
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError:
        raise ValidationError("malformed request line") from None
    parts = text.split(" ")
    if not parts or parts[0] not in METHODS:
        raise ValidationError(f"method not allowed: {parts[0][:16]!r}" if parts else
                              "malformed request line")
    if len(parts) != 3:
        raise ValidationError("malformed request line")
    method, uri, version = parts
    if version not in VERSIONS:
        raise ValidationError(f"unsupported version {version[:16]!r}")
    scheme, sep, remainder = uri.partition("://")
    if not sep or not scheme:
        raise ValidationError("uri must be absolute")
    if scheme.lower() != "http":
        raise ValidationError(f"unsupported scheme {scheme[:16]!r}")
    cut = len(remainder)
    for ch in "/?#":
        i = remainder.find(ch)
        if i >= 0:
            cut = min(cut, i)
    authority, path = remainder[:cut], remainder[cut:]
    host, port = _split_authority(authority)
    path = path.split("#", 1)[0]
    if not path.startswith("/"):
        path = "/" + path
    headers, body = _split_headers(rest)
    return ParsedHttpRequest(method, version, host, port, path, headers, body, rest)


async def _open(host, port):
    return await asyncio.open_connection(host, port)


def _content_length(head: bytes):
    for line in head.split(b"\r\n")[1:]:
        name, _, value = line.partition(b":")
        if name.strip().lower() == b"content-length":
            try:
                return int(value.strip())
            except ValueError:
                return None
    return None


async def _read_response(reader: asyncio.StreamReader, method: str) -> bytes:
    head = await reader.readuntil(b"\r\n\r\n")
    status = head.split(b" ", 2)
    code = int(status[1]) if len(status) > 1 and status[1].isdigit() else 0
    if method == "HEAD" or code in (204, 304) or 100 <= code < 200:
        return head
    length = _content_length(head)
    if length is not None:
        return head + await reader.readexactly(length)
    return head + await reader.read()   # chunked or close-delimited: read to EOF


async def execute_http(req: ParsedHttpRequest, deadline: float, *, ident: str = "response",
                       key: bytes = b"", connector=_open, hosts=None) -> DataItem:
    """Send ``req``; the payload of the returned item is the raw response.

    Transport problems do not raise: they come back as an error item.
    ``deadline`` is an absolute ``time.monotonic()`` value.
    """
    target = (hosts or {}).get(req.host, req.host)
    writer = None
    try:
        async def exchange():
            nonlocal writer
            reader, writer = await connector(target, req.port)
            writer.write(req.wire())
            await writer.drain()
            return await _read_response(reader, req.method)

        remaining = max(0.0, deadline - time.monotonic())
        raw = await asyncio.wait_for(exchange(), remaining)
        return DataItem(ident, key, raw)
    except asyncio.TimeoutError:
        return error_item(f"deadline exceeded contacting {req.host}:{req.port}")
    except ConnectionRefusedError as exc:
        return error_item(f"connection refused: {req.host}:{req.port} ({exc.strerror})")
    except asyncio.IncompleteReadError:
        return error_item(f"connection closed mid-response from {req.host}:{req.port}")
    except (OSError, asyncio.LimitOverrunError, ValueError) as exc:
        return error_item(f"transport error: {req.host}:{req.port}: {exc}")
    finally:
        if writer is not None:
            writer.close()
            try:
                await writer.wait_closed()
            except OSError:
                pass


def _unique(items):
    """Suffix repeated idents (several error items in one instance)."""
    seen = set()
    out = []
    for it in items:
        ident, n = it.ident, 1
        while ident in seen:
            ident = f"{it.ident}#{n}"
            n += 1
        seen.add(ident)
        out.append(it if ident == it.ident else DataItem(ident, it.key, it.data))
    return out


class CommRunner:
    """Runs HTTP tasks; one instance serves one engine's event loop."""

    def __init__(self, *, connector=_open, hosts=None, max_in_flight: int = MAX_IN_FLIGHT):
        self.connector = connector
        self.hosts = dict(hosts or {})
        self.max_in_flight = max_in_flight

    async def handle(self, item: DataItem, deadline: float) -> DataItem:
        try:
            req = validate(item)
        except ValidationError as exc:
            return DataItem("error", item.key, f"invalid request: {exc.reason}".encode())
        resp = await execute_http(req, deadline, ident=item.ident, key=item.key,
                                  connector=self.connector, hosts=self.hosts)
        return DataItem("error", item.key, resp.data) if resp.ident == "error" else resp

    async def run(self, task: EngineTask) -> TaskResult:
        spec = task.spec
        stats = task.stats
        t0 = time.monotonic()
        stats["queue_wait"] = max(0.0, t0 - task.enqueued_at) if task.enqueued_at else 0.0
        ctx = task.context
        items = [item for s in ctx.read_sets() for item in s.items]
        deadline = t0 + min(spec.timeout, MAX_DEADLINE)
        t1 = time.monotonic()
        responses = _unique(await asyncio.gather(*(self.handle(it, deadline) for it in items)))
        t2 = time.monotonic()
        stats["setup"] = t1 - t0
        stats["execute"] = t2 - t1
        out_name = spec.output_sets[0] if spec.output_sets else "Response"
        sets = [DataSet(out_name, responses)] + [DataSet(n) for n in spec.output_sets[1:]]
        try:
            ctx.reset()
            ctx.write_sets(sets)
        except ContextOverflowError as exc:
            return TaskResult(task, failure=f"output {exc}")
        stats["output"] = time.monotonic() - t2
        return TaskResult(task, outputs=sets)
