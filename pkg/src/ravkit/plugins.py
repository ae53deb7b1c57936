"""Plugin wire protocol and deterministic mock implementations.

Every ML dependency (extractors, fallback, OCR reference, enricher) sits
behind this boundary. Requests and responses are single JSON documents;
transports are newline-delimited JSON over subprocess stdio or HTTP POST
with identical payloads. Crops travel as base64 PNG (lossless) so the
anchor-derived comparisons survive the boundary byte-exact.
"""

from __future__ import annotations

import base64
import io
import json
import subprocess
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .model import (
    IMAGE_TYPES,
    ImageEnrichment,
    TableEntity,
    TextEntity,
    canonical_json,
)

SCHEMA_VERSION = "1"
ROLES = ("primary_extractor", "fallback_extractor", "ocr_reference", "enricher")


class PluginProtocolError(ValueError):
    """Request/response violates the wire schema."""


def encode_crop(pixels: np.ndarray) -> str:
    im = Image.fromarray(np.asarray(pixels).astype(np.uint8))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_crop(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as im:
        arr = np.asarray(im)
    if arr.size == 0:
        raise PluginProtocolError("crop decodes to an empty raster")
    return arr


@dataclass(frozen=True)
class PluginRequest:
    request_id: str
    role: str
    entity_type: str
    crop: str  # base64 PNG
    context: tuple = ()
    region_id: str = ""
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))
        if self.role not in ROLES:
            raise PluginProtocolError(f"unknown role {self.role!r}")

    def to_json(self):
        return {
            "request_id": self.request_id,
            "role": self.role,
            "entity_type": self.entity_type,
            "crop": self.crop,
            "context": list(self.context),
            "region_id": self.region_id,
            "schema_version": self.schema_version,
        }

    def serialize(self) -> str:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, d) -> "PluginRequest":
        return cls(
            request_id=str(d["request_id"]),
            role=str(d["role"]),
            entity_type=str(d["entity_type"]),
            crop=str(d["crop"]),
            context=tuple(str(c) for c in d.get("context", [])),
            region_id=str(d.get("region_id", "")),
            schema_version=str(d.get("schema_version", "")),
        )


@dataclass(frozen=True)
class PluginResponse:
    request_id: str
    ok: bool
    payload: dict | None = None
    error: str | None = None

    def to_json(self):
        return {
            "request_id": self.request_id,
            "ok": self.ok,
            "payload": self.payload,
            "error": self.error,
        }

    def serialize(self) -> str:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, d) -> "PluginResponse":
        return cls(
            request_id=str(d.get("request_id", "")),
            ok=bool(d.get("ok", False)),
            payload=d.get("payload"),
            error=d.get("error"),
        )


def _fail(request_id: str, message: str) -> PluginResponse:
    return PluginResponse(request_id=request_id, ok=False, error=message)


def validate_payload(role: str, entity_type: str, payload) -> str | None:
    """Schema check for an ok response; returns a message or None."""
    if not isinstance(payload, dict):
        return "payload must be an object"
    if role == "ocr_reference":
        if not isinstance(payload.get("text"), str):
            return "ocr_reference payload needs a 'text' string"
        return None
    if role == "enricher":
        if payload.get("image_type") not in IMAGE_TYPES:
            return f"image_type {payload.get('image_type')!r} outside closed set"
        sd = payload.get("structured_data")
        if sd is not None and not isinstance(sd, dict):
            return "structured_data must be an object or null"
        return None
    # extractor roles
    kind = payload.get("kind")
    if entity_type == "table":
        if kind != "table":
            return "table extraction payload must have kind=table"
        try:
            entity = TableEntity.from_json(payload)
        except (KeyError, TypeError, ValueError) as exc:
            return f"bad table payload: {exc}"
        problems = entity.violations()
        return problems[0] if problems else None
    if entity_type in ("text", "formula", "url"):
        if kind != "text":
            return "text extraction payload must have kind=text"
        if not isinstance(payload.get("text"), str):
            return "text payload needs a 'text' string"
        return None
    if entity_type == "image":
        if kind != "image":
            return "image extraction payload must have kind=image"
        if not isinstance(payload.get("crop"), str):
            return "image payload needs a base64 'crop'"
        return None
    return f"unknown entity type {entity_type!r}"


def parse_response(request: PluginRequest, text: str) -> PluginResponse:
    """Parse and schema-validate a raw response line; never raises, all
    failure paths map to ok=False."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return _fail(request.request_id, f"malformed response: {exc}")
    resp = PluginResponse.from_json(doc)
    if resp.request_id != request.request_id:
        return _fail(request.request_id, "request_id mismatch")
    if not resp.ok:
        return resp if resp.error else _fail(request.request_id, "plugin reported failure")
    problem = validate_payload(request.role, request.entity_type, resp.payload)
    if problem:
        return _fail(request.request_id, f"schema violation: {problem}")
    return resp


# ---------------------------------------------------------------------------
# transports


class PluginHandle:
    """One callable plugin endpoint. Subclasses provide _transport()."""

    plugin_id = "plugin"
    concurrency = "serial"
    in_process = False

    def call(self, request: PluginRequest, timeout: float = 30.0) -> PluginResponse:
        try:
            raw = self._transport(request, timeout)
        except TimeoutError:
            return _fail(request.request_id, "timeout")
        except Exception as exc:  # transport failures become ok=False
            return _fail(request.request_id, f"transport failure: {exc}")
        return parse_response(request, raw)

    def _transport(self, request: PluginRequest, timeout: float) -> str:
        raise NotImplementedError

    def close(self):
        pass


class InProcessHandle(PluginHandle):
    """Wraps a Python callable (request -> response dict or PluginResponse).

    Used for the deterministic mocks; calls are reported with duration 0.0
    so trace files stay byte-identical across runs.
    """

    concurrency = "concurrent"
    in_process = True

    def __init__(self, fn, plugin_id="inprocess"):
        self._fn = fn
        self.plugin_id = plugin_id

    def _transport(self, request: PluginRequest, timeout: float) -> str:
        out = self._fn(request)
        if isinstance(out, PluginResponse):
            return out.serialize()
        return canonical_json(out)


class SubprocessHandle(PluginHandle):
    """Newline-delimited JSON over a child process's stdio.

    The child sends one handshake line {roles, schema_version, concurrency}
    on startup, then answers one response line per request line.
    """

    def __init__(self, cmd, plugin_id=None, handshake_timeout: float = 10.0):
        self.cmd = list(cmd)
        self.plugin_id = plugin_id or self.cmd[0]
        self._proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()
        self.handshake = self._read_line(handshake_timeout)
        hs = json.loads(self.handshake)
        if hs.get("schema_version") != SCHEMA_VERSION:
            self.close()
            raise PluginProtocolError(
                f"schema_version mismatch: {hs.get('schema_version')!r}"
            )
        self.roles = tuple(hs.get("roles", []))
        self.concurrency = hs.get("concurrency", "serial")

    def _read_line(self, timeout: float) -> str:
        result = {}

        def reader():
            result["line"] = self._proc.stdout.readline()

        th = threading.Thread(target=reader, daemon=True)
        th.start()
        th.join(timeout)
        if th.is_alive() or not result.get("line"):
            raise TimeoutError("plugin did not answer in time")
        return result["line"].strip()

    def _transport(self, request: PluginRequest, timeout: float) -> str:
        with self._lock:
            self._proc.stdin.write(request.serialize() + "\n")
            self._proc.stdin.flush()
            return self._read_line(timeout)

    def close(self):
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class HttpHandle(PluginHandle):
    """HTTP POST transport with the same JSON payloads."""

    concurrency = "concurrent"

    def __init__(self, url, plugin_id=None):
        self.url = url
        self.plugin_id = plugin_id or url

    def _transport(self, request: PluginRequest, timeout: float) -> str:
        import requests

        resp = requests.post(
            self.url,
            data=request.serialize().encode("utf-8"),
            headers={"Content-Type": "application/json"},
            timeout=timeout,
        )
        resp.raise_for_status()
        return resp.text


def call_plugin(handle: PluginHandle, request: PluginRequest, timeout: float = 30.0) -> PluginResponse:
    """Send one request through a handle; all failures map to ok=False.

    Returns (response, duration). In-process handles report duration 0.0
    so trace files stay deterministic."""
    start = time.monotonic()
    response = handle.call(request, timeout=timeout)
    duration = 0.0 if handle.in_process else time.monotonic() - start
    return response, duration


# ---------------------------------------------------------------------------
# deterministic mocks


@dataclass(frozen=True)
class CorruptionSpec:
    """Seeded error injection modelling the known table failure modes:
    adjacent-column merges, row drops, and per-character noise."""

    epsilon: float = 0.0
    p_row_merge: float = 0.0
    p_col_merge: float = 0.0
    p_row_drop: float = 0.0
    crop_jitter_px: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("epsilon", "p_row_merge", "p_col_merge", "p_row_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0,1]")


_NOISE_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"


def _corrupt_text(text: str, epsilon: float, rng: np.random.Generator) -> str:
    if epsilon <= 0.0 or not text:
        return text
    chars = list(text)
    for i, ch in enumerate(chars):
        if rng.random() < epsilon:
            repl = ch
            while repl == ch:
                repl = _NOISE_ALPHABET[int(rng.integers(len(_NOISE_ALPHABET)))]
            chars[i] = repl
    return "".join(chars)


def mock_extract_table(ground_truth: TableEntity, spec: CorruptionSpec) -> TableEntity:
    """Seeded deterministic corruption of a ground-truth table."""
    rng = np.random.default_rng(spec.seed)
    rows = [list(ground_truth.row(r)) for r in range(ground_truth.n_rows)]
    headers = list(ground_truth.headers)

    if ground_truth.n_cols >= 2 and rng.random() < spec.p_col_merge:
        c = int(rng.integers(ground_truth.n_cols - 1))
        for row in rows:
            row[c] = (row[c] + " " + row[c + 1]).strip()
            del row[c + 1]
        if headers:
            headers[c] = (headers[c] + " " + headers[c + 1]).strip()
            del headers[c + 1]

    if len(rows) >= 2 and rng.random() < spec.p_row_drop:
        del rows[int(rng.integers(len(rows)))]

    if len(rows) >= 2 and rng.random() < spec.p_row_merge:
        r = int(rng.integers(len(rows) - 1))
        rows[r] = [(a + " " + b).strip() for a, b in zip(rows[r], rows[r + 1])]
        del rows[r + 1]

    cells = [_corrupt_text(c, spec.epsilon, rng) for row in rows for c in row]
    return TableEntity(
        n_rows=len(rows),
        n_cols=len(rows[0]) if rows else ground_truth.n_cols,
        cells=tuple(cells),
        headers=tuple(headers),
    )


def mock_fallback(ground_truth, recovery_quality: float, seed: int):
    """With probability ``recovery_quality`` return the ground truth;
    otherwise return a freshly corrupted entity (epsilon 0.5)."""
    rng = np.random.default_rng(seed)
    if rng.random() < recovery_quality:
        return ground_truth
    if isinstance(ground_truth, TableEntity):
        return mock_extract_table(
            ground_truth, CorruptionSpec(epsilon=0.5, seed=seed + 1)
        )
    if isinstance(ground_truth, TextEntity):
        sub_rng = np.random.default_rng(seed + 1)
        return TextEntity(
            text=_corrupt_text(ground_truth.text, 0.5, sub_rng),
            urls=ground_truth.urls,
            latex=ground_truth.latex,
        )
    return ground_truth


def scripted_extractor(script: dict, plugin_id: str = "scripted") -> InProcessHandle:
    """Plugin handle answering each region_id with a pre-written entity.

    Script values may be TableEntity/TextEntity objects, payload dicts, or
    for enricher roles an ImageEnrichment. Unknown regions get ok=False.
    """

    def respond(request: PluginRequest):
        key = request.region_id
        if key not in script:
            return _fail(request.request_id, f"no scripted entity for region {key!r}")
        value = script[key]
        if isinstance(value, (TableEntity, TextEntity)):
            payload = value.to_json()
        elif isinstance(value, ImageEnrichment):
            payload = value.to_json()
        elif isinstance(value, str):
            payload = {"kind": "text", "text": value}
        elif isinstance(value, np.ndarray):
            payload = {"kind": "image", "crop": encode_crop(value)}
        else:
            payload = dict(value)
        return PluginResponse(request_id=request.request_id, ok=True, payload=payload)

    return InProcessHandle(respond, plugin_id=plugin_id)
