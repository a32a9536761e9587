"""HTTP API: registration, synchronous invocation and node statistics."""

from __future__ import annotations

import base64
import binascii
import json
import logging

from aiohttp import web

from .data import DataItem, DataSet, FunctionSpec, Kind
from .errors import (DslError, CompileError, InvocationError, KindMismatchError,
                     MissingInputError, UnknownNameError)

log = logging.getLogger(__name__)

MAX_BINARY = 64 * 1024 * 1024
NODE_KEY = web.AppKey("node", object)
LIMIT_KEY = web.AppKey("max_binary", int)


def encode_sets(sets) -> list[dict]:
    return [{"name": s.name, "items": [
        {"ident": it.ident, "key_b64": base64.b64encode(it.key).decode(),
         "data_b64": base64.b64encode(it.data).decode()} for it in s.items]} for s in sets]


def decode_sets(doc) -> list[DataSet]:
    if not isinstance(doc, dict) or not isinstance(doc.get("sets"), list):
        raise ValueError("body must be {\"sets\": [...]}")
    out = []
    for s in doc["sets"]:
        items = []
        for it in s.get("items", []):
            items.append(DataItem(str(it["ident"]),
                                  base64.b64decode(it.get("key_b64", ""), validate=True),
                                  base64.b64decode(it.get("data_b64", ""), validate=True)))
        ds = DataSet(str(s["name"]), items)
        ds.check_unique()
        out.append(ds)
    return out


def _error(status, message, **extra):
    return web.json_response({"error": message, **extra}, status=status)


async def register_function(request: web.Request):
    node = request.app[NODE_KEY]
    limit = request.app[LIMIT_KEY]
    if not request.content_type.startswith("multipart/"):
        return _error(400, "expected multipart body with parts 'spec' and 'binary'")
    reader = await request.multipart()
    spec_doc = binary = None
    async for part in reader:
        if part.name == "spec":
            spec_doc = await part.read(decode=True)
        elif part.name == "binary":
            chunks, size = [], 0
            while True:
                chunk = await part.read_chunk(1 << 20)
                if not chunk:
                    break
                size += len(chunk)
                if size > limit:
                    return _error(413, f"binary exceeds {limit} bytes")
                chunks.append(chunk)
            binary = b"".join(chunks)
    if spec_doc is None or binary is None:
        return _error(400, "both 'spec' and 'binary' parts are required")
    try:
        spec = FunctionSpec.from_json(json.loads(spec_doc))
        if spec.kind is not Kind.COMPUTE:
            raise KindMismatchError("only compute functions can be registered")
    except KindMismatchError as exc:
        return _error(409, str(exc))
    except (ValueError, TypeError, KeyError) as exc:
        return _error(400, f"malformed spec: {exc}")
    try:
        code_ref = node.register_function(spec, binary)
    except KindMismatchError as exc:
        return _error(409, str(exc))
    return web.json_response({"name": spec.name, "code_ref": code_ref})


async def register_composition(request: web.Request):
    node = request.app[NODE_KEY]
    text = await request.text()
    try:
        ir = node.register_composition(text)
    except (DslError, CompileError) as exc:
        return _error(400, str(exc), kind=getattr(exc, "kind", "syntax"))
    except KindMismatchError as exc:
        return _error(409, str(exc))
    return web.json_response({"name": ir.name, "nodes": len(ir.nodes), "edges": len(ir.edges)})


async def invoke(request: web.Request):
    node = request.app[NODE_KEY]
    name = request.match_info["name"]
    try:
        sets = decode_sets(await request.json())
    except (ValueError, KeyError, TypeError, binascii.Error) as exc:
        return _error(400, f"malformed input sets: {exc}")
    cold = request.headers.get("X-Cold-Start", "") in ("1", "true")
    try:
        result = await node.dispatcher.invoke_async(name, sets, cold=cold)
    except (UnknownNameError, KindMismatchError) as exc:
        return _error(404, str(exc))
    except MissingInputError as exc:
        return _error(422, str(exc), set=exc.set_name)
    except InvocationError as exc:
        return _error(500, "invocation failed", report=exc.report)
    return web.json_response({"invocation": result.invocation_id,
                              "sets": encode_sets(result.sets), "timing": result.timing})


async def stats(request: web.Request):
    return web.json_response(request.app[NODE_KEY].stats())


def make_app(node, max_binary: int = MAX_BINARY) -> web.Application:
    app = web.Application(client_max_size=max_binary + (1 << 20))
    app[NODE_KEY] = node
    app[LIMIT_KEY] = max_binary
    app.router.add_post("/v1/functions", register_function)
    app.router.add_post("/v1/compositions", register_composition)
    app.router.add_post(r"/v1/compositions/{name}:invoke", invoke)
    app.router.add_get("/v1/stats", stats)
    return app


async def serve(node, host: str, port: int, **app_kw) -> web.AppRunner:
    """Start the API on the running loop; returns the runner (call cleanup())."""
    runner = web.AppRunner(make_app(node, **app_kw), access_log=None)
    await runner.setup()
    site = web.TCPSite(runner, host, port)
    await site.start()
    return runner
