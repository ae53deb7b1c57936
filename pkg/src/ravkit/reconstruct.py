"""Reconstructors: render extracted entities back into comparable forms.

No operation here reads the competing extraction when building a
reference channel; references derive from the anchor crop or the page's
embedded text stream only, which is what keeps validation non-circular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import font
from .ingest import PageDescriptor
from .metrics import laplacian_variance, normalize_text, phash64
from .model import AnchorCrop, BoundingBox, ImageEntity, TableEntity


class DegenerateTableError(ValueError):
    """Table entity cannot be rendered (zero rows or columns)."""


class ReferenceUnavailableError(RuntimeError):
    """No anchor-derived text reference could be produced."""


@dataclass(frozen=True)
class TableReconstruction:
    rendered: np.ndarray
    n_rows: int
    n_cols: int
    headers: tuple
    cells: tuple
    serialized_cells: str

    def __post_init__(self):
        self.rendered.setflags(write=False)


@dataclass(frozen=True)
class ImageFeatureSet:
    phash_extracted: int
    phash_anchor: int
    sharp_extracted: float
    sharp_anchor: float
    caption_adjacent: bool


@dataclass(frozen=True)
class TextReference:
    text: str
    source: str  # "embedded_stream" | "re_ocr"


# Columns wider than this many glyphs are clipped when drawing cell text;
# keeps pathological cell lengths from exploding the native render size.
MAX_COL_GLYPHS = 32
CELL_PAD = 4


def _col_glyph_widths(entity: TableEntity) -> list:
    widths = []
    for c in range(entity.n_cols):
        texts = [entity.cells[r * entity.n_cols + c] for r in range(entity.n_rows)]
        if entity.headers:
            texts.append(entity.headers[c])
        longest = max((len(t) for t in texts), default=0)
        widths.append(min(max(longest, 1), MAX_COL_GLYPHS))
    return widths


def render_table_grid(entity: TableEntity, target_w: int, target_h: int) -> np.ndarray:
    """Deterministic raster of a table entity.

    White background, 1-px black grid, cell text in the embedded bitmap
    font with 4-px padding, column widths proportional to the longest cell
    text (min 1 glyph, clipped at MAX_COL_GLYPHS), nearest-neighbor resized
    to the target dimensions. Identical input yields identical pixels.
    """
    if entity.n_rows < 1 or entity.n_cols < 1:
        raise DegenerateTableError(f"table shape {entity.n_rows}x{entity.n_cols}")
    if target_w <= 0 or target_h <= 0:
        raise ValueError("target dimensions must be positive")
    if len(entity.cells) != entity.n_rows * entity.n_cols:
        raise DegenerateTableError("cells length mismatch")

    glyph_widths = _col_glyph_widths(entity)
    col_px = [w * font.ADVANCE + 2 * CELL_PAD for w in glyph_widths]
    row_px = font.LINE_H + 2 * CELL_PAD
    has_header = bool(entity.headers)
    n_render_rows = entity.n_rows + (1 if has_header else 0)
    width = sum(col_px) + entity.n_cols + 1
    height = n_render_rows * row_px + n_render_rows + 1

    canvas = np.full((height, width), 255, dtype=np.uint8)
    # grid lines
    ys = [r * (row_px + 1) for r in range(n_render_rows + 1)]
    xs = np.cumsum([0] + [c + 1 for c in col_px])
    for y in ys:
        canvas[y, :] = 0
    for x in xs:
        canvas[:, x] = 0

    def draw_row(texts, render_row):
        y = ys[render_row] + 1 + CELL_PAD
        for c, text in enumerate(texts):
            x = int(xs[c]) + 1 + CELL_PAD
            font.draw_text(canvas, text, x, y, max_width=col_px[c] - 2 * CELL_PAD)

    if has_header:
        draw_row(entity.headers, 0)
    for r in range(entity.n_rows):
        draw_row(entity.row(r), r + (1 if has_header else 0))

    im = Image.fromarray(canvas, mode="L")
    out = np.asarray(im.resize((target_w, target_h), Image.Resampling.NEAREST))
    return np.ascontiguousarray(out)


def structural_signature(entity: TableEntity):
    """Structural channel: shape echo plus the canonical cell serialization
    (headers then cells, row-major, space-joined, whitespace-normalized)."""
    parts = list(entity.headers) + list(entity.cells)
    serialized = normalize_text(" ".join(parts))
    signature = {
        "n_rows": entity.n_rows,
        "n_cols": entity.n_cols,
        "headers": tuple(entity.headers),
        "cells": tuple(entity.cells),
    }
    return signature, serialized


def reconstruct_table(entity: TableEntity, anchor: AnchorCrop) -> TableReconstruction:
    """Full table reconstruction: visual channel sized to the anchor crop
    plus the structural signature."""
    h, w = anchor.pixels.shape[:2]
    rendered = render_table_grid(entity, target_w=w, target_h=h)
    signature, serialized = structural_signature(entity)
    return TableReconstruction(
        rendered=rendered,
        n_rows=signature["n_rows"],
        n_cols=signature["n_cols"],
        headers=signature["headers"],
        cells=signature["cells"],
        serialized_cells=serialized,
    )


def _horizontal_overlap_ratio(a: BoundingBox, b: BoundingBox) -> float:
    overlap = min(a.x1, b.x1) - max(a.x0, b.x0)
    if overlap <= 0:
        return 0.0
    return overlap / min(a.width, b.width)


def caption_adjacent(
    image_bbox: BoundingBox,
    text_bboxes,
    page_height: float,
    max_gap_frac: float = 0.05,
    min_overlap: float = 0.3,
) -> bool:
    """True iff some text box sits within the vertical proximity band of the
    image and overlaps it horizontally by at least ``min_overlap``."""
    max_gap = max_gap_frac * page_height
    for tb in text_bboxes:
        if tb.y0 >= image_bbox.y1:
            gap = tb.y0 - image_bbox.y1
        elif tb.y1 <= image_bbox.y0:
            gap = image_bbox.y0 - tb.y1
        else:
            gap = 0.0
        if gap <= max_gap and _horizontal_overlap_ratio(tb, image_bbox) >= min_overlap:
            return True
    return False


def reconstruct_image_features(
    entity: ImageEntity,
    anchor: AnchorCrop,
    page_text_bboxes=(),
    page_height: float | None = None,
    max_gap_frac: float = 0.05,
    min_overlap: float = 0.3,
) -> ImageFeatureSet:
    """Perceptual hashes and sharpness of both crops plus the spatial
    caption adjacency check."""
    if page_height is None:
        page_height = anchor.bbox.y1  # degenerate fallback, gap band only shrinks
    return ImageFeatureSet(
        phash_extracted=phash64(entity.crop),
        phash_anchor=phash64(anchor.pixels),
        sharp_extracted=laplacian_variance(entity.crop),
        sharp_anchor=laplacian_variance(anchor.pixels),
        caption_adjacent=caption_adjacent(
            anchor.bbox, page_text_bboxes, page_height, max_gap_frac, min_overlap
        ),
    )


def _spans_in_bbox(page: PageDescriptor, bbox: BoundingBox):
    hits = []
    for span in page.embedded_text:
        ix0 = max(span.bbox.x0, bbox.x0)
        iy0 = max(span.bbox.y0, bbox.y0)
        ix1 = min(span.bbox.x1, bbox.x1)
        iy1 = min(span.bbox.y1, bbox.y1)
        if ix0 < ix1 and iy0 < iy1:
            hits.append(span)
    hits.sort(key=lambda s: (s.bbox.y0, s.bbox.x0))
    return hits


def reconstruct_text_reference(
    anchor: AnchorCrop, page: PageDescriptor, ocr_provider=None
) -> TextReference:
    """Independent reading of the anchor region.

    Native pages with embedded text covering the anchor use the raw text
    stream (reading order: y, then x). Otherwise the OCR reference plugin
    reads the anchor crop. The extraction is never an input here.
    """
    spans = _spans_in_bbox(page, anchor.bbox)
    if spans:
        return TextReference(
            text=normalize_text(" ".join(s.text for s in spans)),
            source="embedded_stream",
        )
    if ocr_provider is None:
        raise ReferenceUnavailableError(
            f"page {page.page_id}: no embedded text and no OCR reference plugin"
        )
    reading = ocr_provider(anchor)
    if reading is None:
        raise ReferenceUnavailableError(f"page {page.page_id}: OCR reference failed")
    return TextReference(text=normalize_text(reading), source="re_ocr")
