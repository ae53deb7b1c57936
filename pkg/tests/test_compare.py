import numpy as np
import pytest

from ravkit.compare import image_fidelity, row_col_match, table_fidelity, text_fidelity
from ravkit.metrics import cer, ssim_binarized
from ravkit.model import AnchorCrop, BoundingBox, TableEntity
from ravkit.reconstruct import (
    ImageFeatureSet,
    TextReference,
    reconstruct_table,
    structural_signature,
)


def anchor(w=120, h=60):
    return AnchorCrop(
        pixels=np.full((h, w), 255, dtype=np.uint8),
        source_page="p0",
        bbox=BoundingBox(0, 0, w, h),
    )


class TestRowColMatch:
    def test_exact_shape(self):
        assert row_col_match(5, 3, 5, 3) == 1.0

    def test_formula(self):
        # 0.5 * min/max(rows) + 0.5 * min/max(cols)
        assert row_col_match(4, 3, 8, 3) == pytest.approx(0.75)
        assert row_col_match(8, 6, 4, 3) == pytest.approx(0.5)


class TestTableFidelity:
    def test_skip_visual_is_pure_structure(self):
        gt = TableEntity(n_rows=1, n_cols=2, cells=("alpha", "beta"))
        pred = TableEntity(n_rows=1, n_cols=2, cells=("alpha", "bxta"))
        _, ref = structural_signature(gt)
        report = table_fidelity(
            reconstruct_table(pred, anchor()), anchor(), ref, ref_shape=(1, 2), skip_visual=True
        )
        _, pred_ser = structural_signature(pred)
        expected = 0.2 * 1.0 + 0.8 * (1.0 - cer(pred_ser, ref))
        assert report.score == pytest.approx(expected)
        assert "ssim" not in report.components

    def test_full_formula_weights(self):
        gt = TableEntity(n_rows=2, n_cols=2, cells=("a", "b", "c", "d"))
        pred = TableEntity(n_rows=2, n_cols=2, cells=("a", "b", "c", "x"))
        _, ref = structural_signature(gt)
        a = anchor()
        recon = reconstruct_table(pred, a)
        report = table_fidelity(recon, a, ref, ref_shape=(2, 2))
        visual = ssim_binarized(recon.rendered, a.pixels)
        _, pred_ser = structural_signature(pred)
        struct = 0.2 * 1.0 + 0.8 * max(0.0, 1.0 - cer(pred_ser, ref))
        assert report.score == pytest.approx(0.4 * visual + 0.6 * struct)

    def test_missing_ref_shape_flags_component(self):
        pred = TableEntity(n_rows=3, n_cols=2, cells=tuple("abcdef"))
        report = table_fidelity(
            reconstruct_table(pred, anchor()), anchor(), "a b c d e f", ref_shape=None
        )
        assert report.components["shape_unreferenced"] == 1.0
        assert report.components["row_col_match"] == 1.0

    def test_cer_term_floors_at_zero(self):
        pred = TableEntity(n_rows=1, n_cols=1, cells=("#" * 50,))
        report = table_fidelity(
            reconstruct_table(pred, anchor()), anchor(), "ab", ref_shape=(1, 1), skip_visual=True
        )
        assert report.score == pytest.approx(0.2)


class TestImageFidelity:
    def _features(self, phash_a, phash_b, sharp_ext, sharp_anchor, caption):
        return ImageFeatureSet(
            phash_extracted=phash_a,
            phash_anchor=phash_b,
            sharp_extracted=sharp_ext,
            sharp_anchor=sharp_anchor,
            caption_adjacent=caption,
        )

    def test_perfect_match(self):
        report = image_fidelity(self._features(0, 0, 5.0, 5.0, True))
        assert report.score == pytest.approx(1.0)

    def test_sharpness_ratio_clamped_at_one(self):
        sharper = image_fidelity(self._features(0, 0, 50.0, 5.0, True))
        equal = image_fidelity(self._features(0, 0, 5.0, 5.0, True))
        assert sharper.score == equal.score == pytest.approx(1.0)

    def test_two_bit_hash_distance(self):
        report = image_fidelity(self._features(0b11, 0, 5.0, 5.0, True))
        assert report.score == pytest.approx(0.6 * 62 / 64 + 0.3 + 0.1)

    def test_caption_term_weight(self):
        with_cap = image_fidelity(self._features(0, 0, 5.0, 5.0, True))
        without = image_fidelity(self._features(0, 0, 5.0, 5.0, False))
        assert with_cap.score - without.score == pytest.approx(0.1)

    def test_blurry_extraction_penalized(self):
        blurry = image_fidelity(self._features(0, 0, 1.0, 4.0, True))
        assert blurry.score == pytest.approx(0.6 + 0.3 * 0.25 + 0.1)


class TestTextFidelity:
    def test_exact_match(self):
        ref = TextReference(text="hello world", source="embedded_stream")
        assert text_fidelity("hello world", ref).score == 1.0

    def test_score_floors_at_zero(self):
        ref = TextReference(text="ab", source="re_ocr")
        assert text_fidelity("#" * 40, ref).score == 0.0

    def test_cer_component_recorded(self):
        ref = TextReference(text="abcd", source="embedded_stream")
        report = text_fidelity("abcx", ref)
        assert report.components["cer"] == pytest.approx(0.25)
        assert report.score == pytest.approx(0.75)
