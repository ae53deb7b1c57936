"""Wire protocol plumbing shared by the adapter processes.

Transport is either newline-delimited JSON over stdio (one handshake
line, then one response line per request line) or HTTP (POST / with the
request document; GET / returns the handshake). Payloads are identical
across transports. Requests are dispatched to a bounded worker pool and
correlated by request_id, so responses may complete out of order.
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

SCHEMA_VERSION = "1"
ROLES = ("primary_extractor", "fallback_extractor", "ocr_reference", "enricher")
DEFAULT_WORKERS = 4


class AdapterError(ValueError):
    """A request this adapter cannot serve; mapped to an ok=false response."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_crop(pixels: np.ndarray) -> str:
    im = Image.fromarray(np.asarray(pixels).astype(np.uint8))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_crop(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im)
    except Exception as exc:
        raise AdapterError(f"crop is not a decodable image: {exc}") from exc
    if arr.size == 0:
        raise AdapterError("crop decodes to an empty raster")
    return arr


def to_grayscale(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 3:
        return np.asarray(Image.fromarray(arr).convert("L"))
    return arr


def handshake(roles, concurrency: str = "concurrent") -> dict:
    return {
        "roles": list(roles),
        "schema_version": SCHEMA_VERSION,
        "concurrency": concurrency,
    }


def answer(handler, doc) -> dict:
    """Route one parsed request document through a handler.

    The handler exposes ``roles`` and ``handle(request_dict) -> payload``;
    every failure path becomes an ok=false response so the process stays
    alive.
    """
    request_id = ""
    if isinstance(doc, dict):
        request_id = str(doc.get("request_id", ""))

    def fail(message):
        return {"request_id": request_id, "ok": False, "payload": None, "error": message}

    if not isinstance(doc, dict):
        return fail("request must be a JSON object")
    if str(doc.get("schema_version", "")) != SCHEMA_VERSION:
        return fail(f"unsupported schema_version {doc.get('schema_version')!r}")
    role = doc.get("role")
    if role not in handler.roles:
        return fail(f"role {role!r} not served by this adapter")
    try:
        payload = handler.handle(doc)
    except AdapterError as exc:
        return fail(str(exc))
    except Exception as exc:  # engine/client crashes never kill the process
        return fail(f"internal error: {exc}")
    return {"request_id": request_id, "ok": True, "payload": payload, "error": None}


def answer_line(handler, line: str) -> str:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        doc = None
        err = f"malformed request: {exc}"
        return canonical_json({"request_id": "", "ok": False, "payload": None, "error": err})
    return canonical_json(answer(handler, doc))


def serve_stdio(handler, workers: int = DEFAULT_WORKERS) -> None:
    out_lock = threading.Lock()

    def emit(text: str) -> None:
        with out_lock:
            sys.stdout.write(text + "\n")
            sys.stdout.flush()

    emit(canonical_json(handshake(handler.roles, handler.concurrency)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for line in sys.stdin:
            if not line.strip():
                continue
            pool.submit(lambda ln=line: emit(answer_line(handler, ln)))


def serve_http(handler, host: str, port: int, announce=None) -> None:
    class Endpoint(BaseHTTPRequestHandler):
        def _send(self, doc, status=200):
            body = canonical_json(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            self._send(handshake(handler.roles, handler.concurrency))

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length).decode("utf-8", errors="replace")
            self._send(json.loads(answer_line(handler, raw)))

        def log_message(self, *args):  # keep stdout protocol-clean
            pass

    server = ThreadingHTTPServer((host, port), Endpoint)
    bound = {**handshake(handler.roles, handler.concurrency), "port": server.server_port}
    # the bound-port announcement doubles as the handshake for http mode
    print(canonical_json(bound), flush=True)
    if announce is not None:
        announce(server)
    server.serve_forever()


def add_transport_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0, help="http port; 0 picks a free one")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS)


def run(handler, args) -> None:
    if args.transport == "http":
        serve_http(handler, args.host, args.port)
    else:
        serve_stdio(handler, workers=args.workers)
