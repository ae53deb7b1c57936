"""Embedded fixed-metric 5x7 bitmap font.

The table renderer only needs deterministic pixels with plausible glyph
mass, not typographic quality. Glyphs are authored as 7 rows of 5 cells;
'X' marks an ink pixel. Characters without a glyph render as a centered
block so unknown text still contributes mass. The advance is fixed at
6 px (5 px glyph + 1 px spacing) and the line height at 9 px.
"""

from __future__ import annotations

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
ADVANCE = 6
LINE_H = 9

_RAW = {
    " ": ("....." , "....." , "....." , "....." , "....." , "....." , "....."),
    "!": ("..X..", "..X..", "..X..", "..X..", "..X..", ".....", "..X.."),
    '"': (".X.X.", ".X.X.", ".....", ".....", ".....", ".....", "....."),
    "#": (".X.X.", "XXXXX", ".X.X.", ".X.X.", ".X.X.", "XXXXX", ".X.X."),
    "$": ("..X..", ".XXXX", "X.X..", ".XXX.", "..X.X", "XXXX.", "..X.."),
    "%": ("XX..X", "XX..X", "...X.", "..X..", ".X...", "X..XX", "X..XX"),
    "&": (".XX..", "X..X.", "X.X..", ".X...", "X.X.X", "X..X.", ".XX.X"),
    "'": ("..X..", "..X..", ".....", ".....", ".....", ".....", "....."),
    "(": ("...X.", "..X..", ".X...", ".X...", ".X...", "..X..", "...X."),
    ")": (".X...", "..X..", "...X.", "...X.", "...X.", "..X..", ".X..."),
    "*": (".....", "X.X.X", ".XXX.", "XXXXX", ".XXX.", "X.X.X", "....."),
    "+": (".....", "..X..", "..X..", "XXXXX", "..X..", "..X..", "....."),
    ",": (".....", ".....", ".....", ".....", "..XX.", "..X..", ".X..."),
    "-": (".....", ".....", ".....", "XXXXX", ".....", ".....", "....."),
    ".": (".....", ".....", ".....", ".....", ".....", ".XX..", ".XX.."),
    "/": ("....X", "...X.", "...X.", "..X..", ".X...", ".X...", "X...."),
    "0": (".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."),
    "1": ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "2": (".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"),
    "3": ("XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."),
    "4": ("...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."),
    "5": ("XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."),
    "6": ("..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."),
    "7": ("XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."),
    "8": (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),
    "9": (".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."),
    ":": (".....", ".XX..", ".XX..", ".....", ".XX..", ".XX..", "....."),
    ";": (".....", ".XX..", ".XX..", ".....", ".XX..", "..X..", ".X..."),
    "<": ("...X.", "..X..", ".X...", "X....", ".X...", "..X..", "...X."),
    "=": (".....", ".....", "XXXXX", ".....", "XXXXX", ".....", "....."),
    ">": (".X...", "..X..", "...X.", "....X", "...X.", "..X..", ".X..."),
    "?": (".XXX.", "X...X", "....X", "...X.", "..X..", ".....", "..X.."),
    "@": (".XXX.", "X...X", "X.XXX", "X.X.X", "X.XXX", "X....", ".XXX."),
    "A": (".XXX.", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "B": ("XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."),
    "C": (".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."),
    "D": ("XXX..", "X..X.", "X...X", "X...X", "X...X", "X..X.", "XXX.."),
    "E": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"),
    "F": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."),
    "G": (".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"),
    "H": ("X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "I": (".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "J": ("..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."),
    "K": ("X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"),
    "L": ("X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"),
    "M": ("X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"),
    "N": ("X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X", "X...X"),
    "O": (".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "P": ("XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."),
    "Q": (".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"),
    "R": ("XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"),
    "S": (".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."),
    "T": ("XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."),
    "U": ("X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "V": ("X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."),
    "W": ("X...X", "X...X", "X...X", "X.X.X", "X.X.X", "XX.XX", "X...X"),
    "X": ("X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"),
    "Y": ("X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."),
    "Z": ("XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"),
    "[": (".XXX.", ".X...", ".X...", ".X...", ".X...", ".X...", ".XXX."),
    "\\": ("X....", ".X...", ".X...", "..X..", "...X.", "...X.", "....X"),
    "]": (".XXX.", "...X.", "...X.", "...X.", "...X.", "...X.", ".XXX."),
    "^": ("..X..", ".X.X.", "X...X", ".....", ".....", ".....", "....."),
    "_": (".....", ".....", ".....", ".....", ".....", ".....", "XXXXX"),
    "`": (".X...", "..X..", ".....", ".....", ".....", ".....", "....."),
    "a": (".....", ".....", ".XXX.", "....X", ".XXXX", "X...X", ".XXXX"),
    "b": ("X....", "X....", "XXXX.", "X...X", "X...X", "X...X", "XXXX."),
    "c": (".....", ".....", ".XXXX", "X....", "X....", "X....", ".XXXX"),
    "d": ("....X", "....X", ".XXXX", "X...X", "X...X", "X...X", ".XXXX"),
    "e": (".....", ".....", ".XXX.", "X...X", "XXXXX", "X....", ".XXX."),
    "f": ("..XX.", ".X...", "XXXX.", ".X...", ".X...", ".X...", ".X..."),
    "g": (".....", ".XXXX", "X...X", "X...X", ".XXXX", "....X", ".XXX."),
    "h": ("X....", "X....", "XXXX.", "X...X", "X...X", "X...X", "X...X"),
    "i": ("..X..", ".....", ".XX..", "..X..", "..X..", "..X..", ".XXX."),
    "j": ("...X.", ".....", "..XX.", "...X.", "...X.", "X..X.", ".XX.."),
    "k": ("X....", "X....", "X..X.", "X.X..", "XX...", "X.X..", "X..X."),
    "l": (".XX..", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "m": (".....", ".....", "XX.X.", "X.X.X", "X.X.X", "X.X.X", "X.X.X"),
    "n": (".....", ".....", "XXXX.", "X...X", "X...X", "X...X", "X...X"),
    "o": (".....", ".....", ".XXX.", "X...X", "X...X", "X...X", ".XXX."),
    "p": (".....", "XXXX.", "X...X", "X...X", "XXXX.", "X....", "X...."),
    "q": (".....", ".XXXX", "X...X", "X...X", ".XXXX", "....X", "....X"),
    "r": (".....", ".....", "X.XX.", "XX..X", "X....", "X....", "X...."),
    "s": (".....", ".....", ".XXXX", "X....", ".XXX.", "....X", "XXXX."),
    "t": (".X...", ".X...", "XXXX.", ".X...", ".X...", ".X..X", "..XX."),
    "u": (".....", ".....", "X...X", "X...X", "X...X", "X..XX", ".XX.X"),
    "v": (".....", ".....", "X...X", "X...X", "X...X", ".X.X.", "..X.."),
    "w": (".....", ".....", "X...X", "X...X", "X.X.X", "X.X.X", ".X.X."),
    "x": (".....", ".....", "X...X", ".X.X.", "..X..", ".X.X.", "X...X"),
    "y": (".....", "X...X", "X...X", "X...X", ".XXXX", "....X", ".XXX."),
    "z": (".....", ".....", "XXXXX", "...X.", "..X..", ".X...", "XXXXX"),
    "{": ("...XX", "..X..", "..X..", ".X...", "..X..", "..X..", "...XX"),
    "|": ("..X..", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."),
    "}": ("XX...", "..X..", "..X..", "...X.", "..X..", "..X..", "XX..."),
    "~": (".....", ".....", ".X...", "X.X.X", "...X.", ".....", "....."),
}

_FALLBACK = ("XXXXX", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXXX")


def _compile(rows) -> np.ndarray:
    return np.array([[c == "X" for c in row] for row in rows], dtype=bool)


_GLYPHS = {ch: _compile(rows) for ch, rows in _RAW.items()}
_FALLBACK_GLYPH = _compile(_FALLBACK)


def glyph(ch: str) -> np.ndarray:
    """Boolean GLYPH_H x GLYPH_W mask for one character."""
    return _GLYPHS.get(ch, _FALLBACK_GLYPH)


def known_chars() -> str:
    return "".join(sorted(_RAW))


def draw_text(canvas: np.ndarray, text: str, x: int, y: int, max_width: int | None = None) -> None:
    """Stamp ``text`` onto a grayscale canvas at (x, y), ink value 0.

    Glyphs falling outside the canvas or past ``max_width`` pixels from
    ``x`` are clipped; drawing never resizes the canvas.
    """
    h, w = canvas.shape
    limit = w if max_width is None else min(w, x + max_width)
    y0 = max(y, 0)
    y1 = min(y + GLYPH_H, h)
    if y0 >= y1:
        return
    cx = x
    for ch in text:
        if cx >= limit:
            break
        g = glyph(ch)
        x0 = max(cx, 0)
        x1 = min(cx + GLYPH_W, limit)
        if x0 < x1:
            mask = g[y0 - y : y1 - y, x0 - cx : x1 - cx]
            region = canvas[y0:y1, x0:x1]
            region[mask] = 0
        cx += ADVANCE


def text_width(text: str) -> int:
    return ADVANCE * len(text)
