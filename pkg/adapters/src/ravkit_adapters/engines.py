"""OCR backends selectable with ``--engine``.

``builtin`` is a dependency-free template matcher for fixed-cell 5x7
bitmap text: it binarizes the crop, splits it into line bands, searches
the small space of grid alignments, and reads each cell as the glyph
with the lowest pixel disagreement. ``tesseract`` wraps pytesseract when
that is installed on the host.
"""

from __future__ import annotations

import numpy as np

from .ocrfont import ADVANCE, GLYPH_H, GLYPH_W, GLYPHS
from .wire import AdapterError


class BitmapTemplateOcr:
    """Reads text rendered in a fixed 5x7 cell grid by template matching."""

    name = "builtin"

    def __init__(self):
        chars = sorted(GLYPHS)
        self._chars = chars
        # stack of (n_glyphs, GLYPH_H, GLYPH_W) templates for vectorized matching
        self._stack = np.stack([GLYPHS[c] for c in chars])

    def read(self, gray: np.ndarray) -> str:
        ink = np.asarray(gray) < 128
        lines = []
        for top, bottom in self._line_bands(ink):
            text = self._read_band(ink, top, bottom)
            if text:
                lines.append(text)
        return "\n".join(lines)

    @staticmethod
    def _line_bands(ink: np.ndarray):
        rows = np.flatnonzero(ink.any(axis=1))
        bands = []
        for r in rows:
            if bands and r == bands[-1][1]:
                bands[-1][1] = r + 1
            else:
                bands.append([r, r + 1])
        return [(a, b) for a, b in bands]

    def _read_band(self, ink: np.ndarray, top: int, bottom: int) -> str:
        cols = np.flatnonzero(ink[top:bottom].any(axis=0))
        if cols.size == 0:
            return ""
        first_col, last_col = int(cols[0]), int(cols[-1])
        # pad so candidate windows can extend past the crop edges
        pad = max(GLYPH_H, GLYPH_W)
        padded = np.pad(ink, pad)

        best = None
        # glyphs may have blank leading columns or blank top rows, so the
        # grid origin can sit up to one cell above/left of the first ink
        for dy in range(GLYPH_H):
            window_top = top - dy
            for dx in range(GLYPH_W):
                x_start = first_col - dx
                n_cells = max(1, -(-(last_col + 1 - x_start) // ADVANCE))
                cost, text = self._decode(padded, pad, window_top, x_start, n_cells)
                key = (cost, dy, dx)
                if best is None or key < best[0]:
                    best = (key, text)
        return best[1].strip()

    def _decode(self, padded: np.ndarray, pad: int, window_top: int, x_start: int, n_cells: int):
        total = 0
        chars = []
        for i in range(n_cells):
            y0 = window_top + pad
            x0 = x_start + i * ADVANCE + pad
            cell = padded[y0 : y0 + GLYPH_H, x0 : x0 + GLYPH_W]
            if not cell.any():
                chars.append(" ")
                continue
            costs = np.logical_xor(self._stack, cell).sum(axis=(1, 2))
            best = int(np.argmin(costs))
            total += int(costs[best])
            chars.append(self._chars[best])
        return total, "".join(chars)


class TesseractOcr:
    """Thin wrapper over a host tesseract install via pytesseract."""

    name = "tesseract"

    def __init__(self):
        try:
            import pytesseract  # noqa: F401
        except ImportError as exc:
            raise AdapterError("tesseract engine needs pytesseract installed") from exc
        self._api = __import__("pytesseract")

    def read(self, gray: np.ndarray) -> str:
        from PIL import Image

        return self._api.image_to_string(Image.fromarray(np.asarray(gray)))


ENGINES = {
    "builtin": BitmapTemplateOcr,
    "tesseract": TesseractOcr,
}


def create_engine(name: str):
    if name not in ENGINES:
        raise AdapterError(f"unknown OCR engine {name!r}; choices: {sorted(ENGINES)}")
    return ENGINES[name]()
