"""Trusted in-process functions for the log-processing composition.

Each takes ``{input set name: DataSet}`` and returns
``{output set name: [DataItem, ...]}``.
"""

import html
import json

from ..data import DataItem, Backend, FunctionSpec, InputDecl

RENDER_LOGS = """\
composition RenderLogs(AccessToken) => HTMLOutput {
    Access(AccessToken = all AccessToken)
        => (AuthRequest = HTTPRequest);
    HTTP(Request = each AuthRequest)
        => (AuthResponse = Response);
    FanOut(HTTPResponse = all AuthResponse)
        => (LogRequests = HTTPRequests);
    HTTP(Request = each LogRequests)
        => (LogResponses = Response);
    Render(HTTPResponses = all LogResponses)
        => (HTMLOutput = HTMLOutput);
}
"""


def specs():
    def spec(name, ins, outs, ref):
        return FunctionSpec(name, input_sets=[InputDecl(i) for i in ins], output_sets=outs,
                            memory_capacity=1 << 20, timeout=5.0,
                            backend=Backend.INPROCESS), f"{__name__}:{ref}".encode()
    return [
        spec("Access", ["AccessToken"], ["HTTPRequest"], "access"),
        spec("FanOut", ["HTTPResponse"], ["HTTPRequests"], "fan_out"),
        spec("Render", ["HTTPResponses"], ["HTMLOutput"], "render"),
    ]


def token_item(token: str, auth_url: str) -> DataItem:
    return DataItem("token", b"", json.dumps({"token": token, "auth": auth_url}).encode())


def split_response(raw: bytes):
    """(status code or None, status line, body) of a raw HTTP response."""
    head, _, body = raw.partition(b"\r\n\r\n")
    status_line = head.split(b"\r\n", 1)[0].decode("latin-1")
    parts = status_line.split(" ", 2)
    code = int(parts[1]) if len(parts) >= 2 and parts[1].isdigit() else None
    return code, status_line, body


def access(inputs):
    out = []
    for item in inputs["AccessToken"]:
        req = json.loads(item.data)
        url = f"{req['auth']}?token={req['token']}"
        out.append(DataItem(f"auth-{item.ident}", b"",
                            f"GET {url} HTTP/1.1\r\nAccept: text/plain\r\n\r\n".encode()))
    return {"HTTPRequest": out}


def fan_out(inputs):
    out = []
    for item in inputs["HTTPResponse"]:
        code, _, body = split_response(item.data)
        if code != 200:
            continue
        for url in body.decode().split():
            out.append(DataItem(f"log{len(out)}", b"", f"GET {url} HTTP/1.1\r\n\r\n".encode()))
    return {"HTTPRequests": out}


def render(inputs):
    parts = ["<html><body>"]
    for item in inputs["HTTPResponses"]:
        if item.ident == "error" or item.ident.startswith("error#"):
            parts.append(f'<section class="error">{html.escape(item.data.decode(errors="replace"))}</section>')
            continue
        code, status, body = split_response(item.data)
        if code is not None and 200 <= code < 300:
            parts.append(f'<section class="log" id="{html.escape(item.ident)}">'
                         f"<pre>{html.escape(body.decode(errors='replace'))}</pre></section>")
        else:
            parts.append(f'<section class="error">{html.escape(status)}</section>')
    parts.append("</body></html>")
    return {"HTMLOutput": [DataItem("html", b"", "\n".join(parts).encode())]}


def manifest() -> dict:
    """Preload manifest for the log-rendering application."""
    fns = []
    for spec, ref in specs():
        doc = spec.to_json()
        doc.pop("code_ref", None)
        fns.append({"spec": doc, "callable": ref.decode()})
    return {"functions": fns, "compositions": [RENDER_LOGS]}


if __name__ == "__main__":
    print(json.dumps(manifest(), indent=2))
