"""Protocol conformance of the adapter processes.

Every golden request fixture must come back schema-valid through the
real subprocess transport, and a pipeline configured with key-gated
fallback/enricher endpoints must complete cleanly when the key is
missing (enrichment skipped, nothing fails).
"""

import json
import os

import numpy as np
import pytest

from adapter_helpers import load_golden, ocr_cmd, read_handshake, vision_cmd

from ravkit import PluginSet, RavConfig, parse_manifest, process_document
from ravkit.font import draw_text
from ravkit.ingest import anchor_crops
from ravkit.plugins import (
    PluginRequest,
    SubprocessHandle,
    call_plugin,
    encode_crop,
    scripted_extractor,
    validate_payload,
)


@pytest.fixture(scope="module")
def ocr_handle():
    handle = SubprocessHandle(ocr_cmd())
    yield handle
    handle.close()


@pytest.fixture(scope="module")
def vision_handle():
    env_had_key = "RAV_API_KEY" in os.environ
    os.environ.setdefault("RAV_API_KEY", "test-key")
    handle = SubprocessHandle(vision_cmd())
    yield handle
    handle.close()
    if not env_had_key:
        del os.environ["RAV_API_KEY"]


def test_golden_fixtures_answered_schema_valid(ocr_handle, vision_handle):
    fixtures = load_golden()
    assert fixtures, "golden fixture file is empty"
    for fixture in fixtures:
        handle = ocr_handle if fixture["server"] == "ocr" else vision_handle
        request = PluginRequest.from_json(fixture["request"])
        response, _ = call_plugin(handle, request)
        assert response.ok == fixture["expect_ok"], (
            f"{fixture['name']}: ok={response.ok} error={response.error}"
        )
        if fixture["expect_ok"]:
            # schema-valid against the pipeline's own payload validator
            assert validate_payload(request.role, request.entity_type, response.payload) is None
        else:
            assert response.error
        if "expect_text" in fixture:
            assert response.payload["text"].strip() == fixture["expect_text"]


def test_missing_key_handshake_excludes_fallback_and_enricher():
    env = {k: v for k, v in os.environ.items() if k != "RAV_API_KEY"}
    hs = read_handshake(vision_cmd(), env)
    assert hs["schema_version"] == "1"
    assert hs["roles"] == []


def test_present_key_handshake_advertises_both_roles():
    env = dict(os.environ, RAV_API_KEY="test-key")
    hs = read_handshake(vision_cmd(), env)
    assert sorted(hs["roles"]) == ["enricher", "fallback_extractor"]


def make_manifest_with_figure():
    page = np.full((300, 300), 255, dtype=np.uint8)
    caption = "Figure 1 shows the layout"
    draw_text(page, caption, 12, 224)
    page[60:180, 40:260] = 230
    page[70:75, 50:250] = 0
    page[100:170, 60:65] = 0
    doc = {
        "document_id": "skipdoc",
        "pages": [
            {
                "page_id": "p0",
                "width": 300,
                "height": 300,
                "raster_base64": encode_crop(page),
                "embedded_text": [
                    {"bbox": {"x0": 10, "y0": 220, "x1": 290, "y1": 240}, "text": caption}
                ],
            }
        ],
        "regions": [
            {
                "region_id": "img",
                "page_id": "p0",
                "entity_type": "image",
                "bbox": {"x0": 40, "y0": 60, "x1": 260, "y1": 180},
            },
            {
                "region_id": "txt",
                "page_id": "p0",
                "entity_type": "text",
                "bbox": {"x0": 10, "y0": 220, "x1": 290, "y1": 240},
            },
        ],
    }
    return parse_manifest(doc), caption


def test_missing_key_pipeline_completes_with_skip_flags(monkeypatch):
    monkeypatch.delenv("RAV_API_KEY", raising=False)
    config = RavConfig(
        plugins={
            "fallback_extractor": {
                "transport": "subprocess",
                "cmd": vision_cmd(),
                "requires_api_key": True,
            },
            "enricher": {
                "transport": "subprocess",
                "cmd": vision_cmd(),
                "requires_api_key": True,
            },
        }
    )
    manifest, caption = make_manifest_with_figure()
    anchors = anchor_crops(manifest)
    primary = scripted_extractor(
        {
            "txt": caption,
            "img": {"kind": "image", "crop": encode_crop(anchors["img"].pixels)},
        }
    )
    from ravkit import resolve_plugins

    resolved = resolve_plugins(config, overrides={"primary_extractor": primary})
    assert resolved.fallback_extractor is None and resolved.enricher is None

    records, traces, summary = process_document(manifest, resolved, config)
    by_id = {r.region_id: r for r in records}
    assert by_id["img"].flags == ("enrichment_skipped",)
    assert by_id["txt"].flags == ()
    assert all(r.fidelity.passed for r in records)
    assert not any(t.gate_fired for t in traces)
    assert summary["fallback_calls"] == 0
    assert summary["enrichment_attempted"] == 0
