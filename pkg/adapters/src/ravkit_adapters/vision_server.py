"""Long-running vision-model fallback extractor and enricher.

Serves fallback_extractor and enricher requests by prompting a vision
model with entity-type-specific templates (versioned text assets under
``prompts/v<schema_version>/``) and schema-validating the model's JSON
output before answering ok=true. The API key is read from the
environment; when it is missing the handshake advertises an empty role
list so the orchestrator skips both roles gracefully, and the process
answers every request ok=false while staying alive.

For tests and offline runs, ``--canned FILE`` replaces the live API with
recorded model outputs keyed by region_id.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

from . import wire
from .wire import AdapterError

API_KEY_ENV = "RAV_API_KEY"
DEFAULT_API_BASE = "https://api.example.invalid/v1/vision"

# closed set accepted by the pipeline's enrichment schema
IMAGE_TYPES = (
    "photograph",
    "chart",
    "diagram",
    "flowchart",
    "logo",
    "screenshot",
    "other",
)

PROMPT_KEYS = ("table", "text", "formula", "url", "image", "enricher")


def load_prompt(key: str, schema_version: str = wire.SCHEMA_VERSION) -> str:
    if key not in PROMPT_KEYS:
        raise AdapterError(f"no prompt template for {key!r}")
    ref = resources.files(__package__) / "prompts" / f"v{schema_version}" / f"{key}.txt"
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise AdapterError(
            f"no prompt templates for schema_version {schema_version!r}"
        ) from exc


def render_prompt(key: str, context) -> str:
    snippets = "\n".join(str(c) for c in context) if context else "(none)"
    return load_prompt(key).replace("{context}", snippets)


class LiveClient:
    """POSTs prompt + crop to the vision API; any transport or HTTP error
    surfaces as an AdapterError (→ ok=false response)."""

    def __init__(self, api_base: str, api_key: str, timeout: float = 60.0):
        self.api_base = api_base
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, prompt: str, crop_b64: str, region_id: str) -> str:
        import requests

        try:
            resp = requests.post(
                self.api_base,
                json={"prompt": prompt, "image_base64": crop_b64},
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["output"]
        except Exception as exc:
            raise AdapterError(f"vision API error: {exc}") from exc


class CannedClient:
    """Recorded-response test double: region_id -> model output text."""

    def __init__(self, path: str):
        with open(path, "r", encoding="utf-8") as fh:
            self._outputs = json.load(fh)

    def complete(self, prompt: str, crop_b64: str, region_id: str) -> str:
        if region_id not in self._outputs:
            raise AdapterError(f"no recorded output for region {region_id!r}")
        return self._outputs[region_id]


def parse_model_json(text: str) -> dict:
    """The prompt demands a bare JSON object; prose or fragments fail."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AdapterError(f"model output is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise AdapterError("model output must be a JSON object")
    return doc


def _require_str(doc: dict, key: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str):
        raise AdapterError(f"model output field {key!r} must be a string")
    return value


def table_payload(doc: dict) -> dict:
    headers = doc.get("headers")
    rows = doc.get("rows")
    if not isinstance(headers, list) or not all(isinstance(h, str) for h in headers):
        raise AdapterError("model output 'headers' must be a list of strings")
    if not isinstance(rows, list) or not rows:
        raise AdapterError("model output 'rows' must be a non-empty list")
    n_cols = len(headers) if headers else len(rows[0])
    cells = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n_cols:
            raise AdapterError(f"row {i} does not have {n_cols} cells")
        cells.extend(str(c) for c in row)
    return {
        "kind": "table",
        "n_rows": len(rows),
        "n_cols": n_cols,
        "headers": list(headers),
        "cells": cells,
    }


def text_payload(doc: dict, entity_type: str) -> dict:
    payload = {"kind": "text", "text": _require_str(doc, "text")}
    if entity_type == "formula" and isinstance(doc.get("latex"), str):
        payload["latex"] = doc["latex"]
    return payload


def image_payload(doc: dict, crop_b64: str) -> dict:
    payload = {"kind": "image", "crop": crop_b64}
    if isinstance(doc.get("label"), str):
        payload["label"] = doc["label"]
        if isinstance(doc.get("confidence"), (int, float)):
            payload["label_confidence"] = float(doc["confidence"])
    return payload


def enrichment_payload(doc: dict) -> dict:
    image_type = doc.get("image_type")
    if image_type not in IMAGE_TYPES:
        raise AdapterError(f"model output image_type {image_type!r} outside closed set")
    structured = doc.get("structured_data")
    if structured is not None and not isinstance(structured, dict):
        raise AdapterError("model output structured_data must be an object or null")
    return {
        "image_type": image_type,
        "description": _require_str(doc, "description"),
        "extracted_text": str(doc.get("extracted_text", "")),
        "structured_data": structured,
    }


class VisionHandler:
    concurrency = "concurrent"

    def __init__(self, client):
        self._client = client
        self.roles = ("fallback_extractor", "enricher") if client is not None else ()

    def handle(self, request: dict) -> dict:
        role = request["role"]
        entity_type = str(request.get("entity_type", ""))
        crop_b64 = str(request.get("crop", ""))
        wire.decode_crop(crop_b64)  # reject undecodable crops before any API spend
        prompt_key = "enricher" if role == "enricher" else entity_type
        prompt = render_prompt(prompt_key, request.get("context", ()))
        output = self._client.complete(prompt, crop_b64, str(request.get("region_id", "")))
        doc = parse_model_json(output)
        if role == "enricher":
            return enrichment_payload(doc)
        if entity_type == "table":
            return table_payload(doc)
        if entity_type == "image":
            return image_payload(doc, crop_b64)
        if entity_type in ("text", "formula", "url"):
            return text_payload(doc, entity_type)
        raise AdapterError(f"unknown entity type {entity_type!r}")


def build_handler(args, environ=os.environ) -> VisionHandler:
    key = environ.get(args.api_key_env, "")
    if not key:
        return VisionHandler(None)  # roles advertised as unavailable
    if args.canned:
        return VisionHandler(CannedClient(args.canned))
    return VisionHandler(LiveClient(args.api_base, key, timeout=args.timeout))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serve-vision-fallback",
        description="Answer fallback_extractor and enricher plugin requests with a vision model.",
    )
    parser.add_argument("--api-base", default=DEFAULT_API_BASE)
    parser.add_argument("--api-key-env", default=API_KEY_ENV)
    parser.add_argument("--timeout", type=float, default=60.0)
    parser.add_argument(
        "--canned", default=None, help="recorded model outputs (JSON: region_id -> text)"
    )
    wire.add_transport_args(parser)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    wire.run(build_handler(args), args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
