"""Cross-process demo: the pipeline pulls its text reference from the
OCR adapter over the wire protocol.

A page is rendered with the bitmap font and carries no embedded text, so
the validator has no reference of its own. The serve-reference-ocr
adapter is spawned as a subprocess plugin and re-reads each anchor crop;
the primary extraction is then scored against that reading.

Run (after installing both packages): python3 demos/ocr_adapter_roundtrip.py
"""

import sys

import numpy as np

from ravkit import PluginSet, RavConfig, parse_manifest, process_document
from ravkit.font import draw_text
from ravkit.plugins import SubprocessHandle, encode_crop, scripted_extractor

LINE = "reference recovered by re-applying ocr"


def build_manifest():
    page = np.full((120, 420), 255, dtype=np.uint8)
    draw_text(page, LINE, 14, 34)
    return parse_manifest(
        {
            "document_id": "ocr-demo",
            "pages": [
                {"page_id": "p0", "width": 420, "height": 120, "raster_base64": encode_crop(page)}
            ],
            "regions": [
                {
                    "region_id": "t0",
                    "page_id": "p0",
                    "entity_type": "text",
                    "bbox": {"x0": 10, "y0": 30, "x1": 410, "y1": 50},
                }
            ],
        }
    )


def main():
    ocr = SubprocessHandle(
        [sys.executable, "-m", "ravkit_adapters.ocr_server", "--engine", "builtin"]
    )
    print("adapter handshake:", ocr.handshake.strip())
    try:
        plugin_set = PluginSet(
            primary_extractor=scripted_extractor({"t0": LINE}, plugin_id="demo-primary"),
            ocr_reference=ocr,
        )
        records, _, _ = process_document(build_manifest(), plugin_set, RavConfig())
    finally:
        ocr.close()
    record = records[0]
    print(f"extraction: {record.entity.text!r}")
    print(f"fidelity vs adapter reading: {record.fidelity.score:.3f} (passed={record.fidelity.passed})")


if __name__ == "__main__":
    main()
