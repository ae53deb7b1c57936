"""Comparators: the three fidelity formulas.

The bootstrap constraint is structural here: no comparator signature
accepts the extraction as the reference argument. The reference channel
(anchor raster, anchor-derived reading, anchor hash/sharpness) is built
by the reconstruct module before any comparator runs.
"""

from __future__ import annotations

from .metrics import cer, phash_similarity, ssim_binarized
from .model import AnchorCrop, DEFAULT_WEIGHTS, FidelityReport
from .reconstruct import ImageFeatureSet, TableReconstruction, TextReference

_SHARPNESS_FLOOR = 1e-6


def row_col_match(pred_rows: int, pred_cols: int, ref_rows: int, ref_cols: int) -> float:
    """Graded shape agreement: per-dimension min/max ratio, averaged."""
    rr = min(pred_rows, ref_rows) / max(pred_rows, ref_rows, 1)
    cc = min(pred_cols, ref_cols) / max(pred_cols, ref_cols, 1)
    return 0.5 * rr + 0.5 * cc


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def table_fidelity(
    recon: TableReconstruction,
    anchor: AnchorCrop,
    reference_reading: str,
    ref_shape=None,
    skip_visual: bool = False,
    weights=None,
) -> FidelityReport:
    """Table score: visual SSIM channel plus the structural channel.

    ``reference_reading`` must derive only from the anchor (re-OCR of the
    crop, the embedded stream, or ground truth in evaluation). When no
    independent shape reference exists the shape term defaults to 1 and the
    components record it as unreferenced.
    """
    w = weights or DEFAULT_WEIGHTS
    wv, ws = w["table_visual"], w["table_struct"]
    components = {}

    if ref_shape is not None:
        shape_term = row_col_match(recon.n_rows, recon.n_cols, ref_shape[0], ref_shape[1])
        components["row_col_match"] = shape_term
    else:
        shape_term = 1.0
        components["row_col_match"] = 1.0
        components["shape_unreferenced"] = 1.0

    cells_cer = cer(recon.serialized_cells, reference_reading)
    cells_term = max(0.0, 1.0 - cells_cer)
    components["cer_cells"] = cells_cer
    f_struct = ws["shape"] * shape_term + ws["cells"] * cells_term
    components["struct"] = f_struct

    if skip_visual:
        score = f_struct
    else:
        visual = ssim_binarized(recon.rendered, anchor.pixels)
        components["ssim"] = visual
        score = wv["ssim"] * visual + wv["struct"] * f_struct

    return FidelityReport(score=_clamp01(score), components=components)


def image_fidelity(features: ImageFeatureSet, weights=None) -> FidelityReport:
    """Image score: perceptual-hash similarity, sharpness ratio (clamped at
    1 so sharper-than-source crops are neither penalized nor rewarded), and
    the caption adjacency check."""
    w = (weights or DEFAULT_WEIGHTS)["image"]
    similarity = phash_similarity(features.phash_extracted, features.phash_anchor)
    ratio = min(1.0, features.sharp_extracted / max(features.sharp_anchor, _SHARPNESS_FLOOR))
    caption = 1.0 if features.caption_adjacent else 0.0
    score = w["phash"] * similarity + w["sharpness"] * ratio + w["caption"] * caption
    return FidelityReport(
        score=_clamp01(score),
        components={"phash": similarity, "sharpness": ratio, "caption": caption},
    )


def text_fidelity(extracted_text: str, reference: TextReference) -> FidelityReport:
    """Text score: max(0, 1 - CER) against the anchor-derived reading."""
    error = cer(extracted_text, reference.text)
    return FidelityReport(
        score=max(0.0, 1.0 - error),
        components={"cer": error, "reference_source": 1.0 if reference.source == "embedded_stream" else 0.0},
    )
