"""The builtin OCR engine and the OCR server process."""

import numpy as np
import pytest

from adapter_helpers import levenshtein, ocr_cmd

from ravkit.font import draw_text
from ravkit.plugins import PluginRequest, SubprocessHandle, call_plugin, encode_crop
from ravkit_adapters.engines import BitmapTemplateOcr, create_engine
from ravkit_adapters.wire import AdapterError


def render(lines, w=260, h=None):
    h = h or (len(lines) * 9 + 8)
    canvas = np.full((h, w), 255, dtype=np.uint8)
    for i, line in enumerate(lines):
        draw_text(canvas, line, 3, 4 + i * 9)
    return canvas


def request(crop, rid="q1"):
    return PluginRequest(
        request_id=rid, role="ocr_reference", entity_type="text", crop=crop, region_id="r"
    )


class TestBitmapEngine:
    def test_reads_single_line_exactly(self):
        assert BitmapTemplateOcr().read(render(["hello world"])) == "hello world"

    def test_reads_multiple_lines(self):
        text = BitmapTemplateOcr().read(render(["first line", "second 123"]))
        assert text == "first line\nsecond 123"

    def test_mixed_case_and_punctuation(self):
        line = "Totals: 1,234 (56.7%)"
        assert BitmapTemplateOcr().read(render([line])) == line

    def test_hello_error_rate_within_budget(self):
        reading = BitmapTemplateOcr().read(render(["hello"], w=60))
        assert levenshtein(reading, "hello") / len("hello") <= 0.2

    def test_blank_crop_reads_empty(self):
        assert BitmapTemplateOcr().read(np.full((20, 20), 255, dtype=np.uint8)) == ""

    def test_tolerates_offset_renders(self):
        canvas = np.full((30, 120), 255, dtype=np.uint8)
        draw_text(canvas, "offset", 7, 11)  # not grid-aligned with (0, 0)
        assert BitmapTemplateOcr().read(canvas) == "offset"

    def test_unknown_engine_rejected(self):
        with pytest.raises(AdapterError):
            create_engine("daguerreotype")


@pytest.fixture(scope="module")
def handle():
    handle = SubprocessHandle(ocr_cmd("--engine", "builtin"))
    yield handle
    handle.close()


class TestOcrServerProcess:
    def test_handshake_declares_role(self, handle):
        import json

        hs = json.loads(handle.handshake)
        assert hs["roles"] == ["ocr_reference"]
        assert hs["concurrency"] == "concurrent"

    def test_reading_roundtrip(self, handle):
        crop = encode_crop(render(["alpha beta"]))
        response, duration = call_plugin(handle, request(crop))
        assert response.ok and response.payload["text"] == "alpha beta"
        assert duration > 0.0

    def test_failure_keeps_process_alive(self, handle):
        bad, _ = call_plugin(handle, request("@@not-a-png@@", rid="bad"))
        assert not bad.ok and bad.error
        good, _ = call_plugin(handle, request(encode_crop(render(["still up"])), rid="ok"))
        assert good.ok and good.payload["text"] == "still up"


def test_pipeline_uses_adapter_as_reference_provider():
    """A page with no embedded text: the reference comes from the adapter."""
    from ravkit import PluginSet, RavConfig, parse_manifest, process_document

    line = "the adapter read this"
    page = np.full((120, 260), 255, dtype=np.uint8)
    draw_text(page, line, 14, 34)
    manifest = parse_manifest(
        {
            "document_id": "ocr-integration",
            "pages": [
                {
                    "page_id": "p0",
                    "width": 260,
                    "height": 120,
                    "raster_base64": encode_crop(page),
                }
            ],
            "regions": [
                {
                    "region_id": "t0",
                    "page_id": "p0",
                    "entity_type": "text",
                    "bbox": {"x0": 10, "y0": 30, "x1": 250, "y1": 50},
                }
            ],
        }
    )
    from ravkit.plugins import scripted_extractor

    ocr = SubprocessHandle(ocr_cmd())
    try:
        plugin_set = PluginSet(
            primary_extractor=scripted_extractor({"t0": line}),
            ocr_reference=ocr,
        )
        records, traces, _ = process_document(manifest, plugin_set, RavConfig())
    finally:
        ocr.close()
    assert records[0].fidelity.score == 1.0
    assert records[0].flags == ()
    assert not traces[0].gate_fired
