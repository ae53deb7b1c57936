"""Shared builders for synthetic pages, manifests, and traces."""

import numpy as np
import pytest

from ravkit import (
    FidelityReport,
    PassResult,
    RavConfig,
    TextEntity,
    ValidationTrace,
    parse_manifest,
)
from ravkit.plugins import encode_crop

ALPHABET = list("abcdefghijklmnopqrstuvwxyz")


def random_words(rng, n_words, lo=3, hi=9):
    return " ".join(
        "".join(rng.choice(ALPHABET, int(rng.integers(lo, hi)))) for _ in range(n_words)
    )


def corrupt(text, epsilon, rng):
    """Substitute roughly epsilon of the non-space characters."""
    out = list(text)
    for i, ch in enumerate(out):
        if ch != " " and rng.random() < epsilon:
            out[i] = "#"
    return "".join(out)


def bbox_doc(x0, y0, x1, y1):
    return {"x0": x0, "y0": y0, "x1": x1, "y1": y1}


def grid_text_manifest(references, page_w=2000, page_h=2600, cell_w=50, cell_h=100):
    """One page holding len(references) disjoint text regions in a grid,
    each with an embedded span carrying its reference text."""
    cols = page_w // cell_w
    page = np.full((page_h, page_w), 255, dtype=np.uint8)
    regions, spans = [], []
    for i, ref in enumerate(references):
        r, c = divmod(i, cols)
        box = bbox_doc(c * cell_w, r * cell_h, (c + 1) * cell_w, (r + 1) * cell_h)
        rid = f"r{i:04d}"
        regions.append(
            {"region_id": rid, "page_id": "p0", "entity_type": "text", "bbox": box}
        )
        spans.append({"bbox": box, "text": ref})
    doc = {
        "document_id": "grid",
        "pages": [
            {
                "page_id": "p0",
                "width": page_w,
                "height": page_h,
                "raster_base64": encode_crop(page),
                "embedded_text": spans,
            }
        ],
        "regions": regions,
    }
    return parse_manifest(doc), doc


def make_trace(region_id, primary_score, fallback_score=None, tau=0.85, entity_type="text"):
    """A structurally valid trace with the given pass scores."""
    primary = PassResult(
        entity=TextEntity(text="primary"),
        fidelity=FidelityReport(score=primary_score).gated(tau),
        anchor_sha256="a" * 64,
    )
    fallback = None
    if fallback_score is not None:
        fallback = PassResult(
            entity=TextEntity(text="fallback"),
            fidelity=FidelityReport(score=fallback_score).gated(tau),
            anchor_sha256="a" * 64,
        )
    choice = "fallback" if fallback is not None and fallback_score > primary_score else "primary"
    return ValidationTrace(
        region_id=region_id,
        primary=primary,
        fallback=fallback,
        gate_fired=fallback is not None,
        final_choice=choice,
        entity_type=entity_type,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return RavConfig()
