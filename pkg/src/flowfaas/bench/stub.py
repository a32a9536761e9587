"""Deterministic stub HTTP services for the log-processing workload.

Routes: ``/auth`` lists log-server URLs (one per line), ``/logs/{i}`` returns
fixed log text, ``/ok``, ``/missing`` (404) and ``/delay/{ms}``. Responses
carry no Date header so identical requests get identical bytes.
"""

from __future__ import annotations

import asyncio
import threading
from dataclasses import dataclass, field


@dataclass
class StubConfig:
    host: str = "127.0.0.1"
    port: int = 0
    logs: int = 4
    missing: set = field(default_factory=set)   # log indices served as /missing
    lines: int = 3
    advertise: str | None = None                 # host:port written into /auth


REASONS = {200: "OK", 400: "Bad Request", 404: "Not Found", 405: "Method Not Allowed"}


def response(code: int, body: bytes, content_type: str = "text/plain") -> bytes:
    head = (f"HTTP/1.1 {code} {REASONS.get(code, 'Unknown')}\r\n"
            f"Content-Type: {content_type}\r\n"
            f"Content-Length: {len(body)}\r\n"
            "Connection: close\r\n\r\n")
    return head.encode() + body


def log_text(i: int, lines: int = 3) -> bytes:
    return "".join(f"server {i} entry {j}: ok\n" for j in range(lines)).encode()


class StubServer:
    def __init__(self, config: StubConfig | None = None):
        self.config = config or StubConfig()
        self.server: asyncio.AbstractServer | None = None
        self.port = self.config.port
        self.requests = 0
        self.emitted: list[bytes] = []
        self._handlers: set = set()

    @property
    def base(self) -> str:
        return f"http://{self.config.advertise or f'{self.config.host}:{self.port}'}"

    def route(self, method: str, path: str):
        """(status, body) or a delay in seconds followed by the response."""
        path = path.split("?", 1)[0]
        if path == "/auth":
            urls = [f"{self.base}/missing" if i in self.config.missing else f"{self.base}/logs/{i}"
                    for i in range(self.config.logs)]
            return 0.0, 200, ("\n".join(urls) + "\n").encode()
        if path.startswith("/logs/") and path[6:].isdigit():
            return 0.0, 200, log_text(int(path[6:]), self.config.lines)
        if path == "/ok":
            return 0.0, 200, b"ok\n"
        if path.startswith("/delay/") and path[7:].isdigit():
            return int(path[7:]) / 1000, 200, b"delayed\n"
        return 0.0, 404, b"not found\n"

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        task = asyncio.current_task()
        self._handlers.add(task)
        try:
            head = await reader.readuntil(b"\r\n\r\n")
            line = head.split(b"\r\n", 1)[0].decode("latin-1").split(" ")
            length = 0
            for h in head.split(b"\r\n")[1:]:
                name, _, value = h.partition(b":")
                if name.strip().lower() == b"content-length":
                    length = int(value.strip() or 0)
            if length:
                await reader.readexactly(length)
            self.requests += 1
            if len(line) != 3:
                payload = response(400, b"bad request\n")
            else:
                delay, code, body = self.route(line[0], line[1])
                if delay:
                    await asyncio.sleep(delay)
                payload = response(code, body)
            self.emitted.append(payload)
            writer.write(payload)
            await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError, asyncio.LimitOverrunError):
            pass
        finally:
            self._handlers.discard(task)
            writer.close()

    async def start(self):
        self.server = await asyncio.start_server(self._handle, self.config.host,
                                                 self.config.port, backlog=1024)
        self.port = self.server.sockets[0].getsockname()[1]
        return self

    async def close(self):
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()
        # pending /delay handlers would otherwise outlive the loop
        for task in list(self._handlers):
            task.cancel()
        await asyncio.gather(*self._handlers, return_exceptions=True)


class StubThread:
    """A stub server on its own event loop thread (for tests and benches)."""

    def __init__(self, config: StubConfig | None = None):
        self.stub = StubServer(config)
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, name="stub", daemon=True)

    def start(self):
        self._thread.start()
        asyncio.run_coroutine_threadsafe(self.stub.start(), self.loop).result(5)
        return self

    @property
    def port(self):
        return self.stub.port

    @property
    def base(self):
        return self.stub.base

    def stop(self):
        asyncio.run_coroutine_threadsafe(self.stub.close(), self.loop).result(5)
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
