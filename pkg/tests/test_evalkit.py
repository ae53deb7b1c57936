"""Evaluation metrics: IoU matching, layout F1, table structure agreement,
fidelity-reliability sweeps, fallback recovery accounting, and the
multi-mode QA ablation report."""

import pytest

from conftest import make_trace

from ravkit import (
    BoundingBox,
    EvalInputError,
    TableEntity,
    ablation_report,
    fidelity_reliability,
    iou,
    layout_eval,
    recovery_rate,
    table_structure_eval,
)


def box(x0, y0, x1, y1):
    return BoundingBox(x0, y0, x1, y1)


class TestIou:
    def test_identity(self):
        assert iou(box(0, 0, 10, 10), box(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0

    def test_touching_edges_are_disjoint(self):
        assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0

    def test_half_overlap(self):
        # 5x10 intersection over 10x10 + 10x10 - 50 union
        assert iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_symmetry(self):
        a, b = box(0, 0, 7, 9), box(3, 2, 12, 11)
        assert iou(a, b) == iou(b, a)


class TestLayoutEval:
    def test_hand_computed_micro_macro(self):
        gt = [
            (box(0, 0, 10, 10), "text"),
            (box(20, 0, 30, 10), "text"),
            (box(40, 0, 50, 10), "table"),
        ]
        pred = [
            (box(0, 0, 10, 10), "text"),      # perfect match
            (box(100, 100, 110, 110), "text"),  # spurious
            (box(40, 0, 50, 10), "table"),    # perfect match
        ]
        out = layout_eval(pred, gt)
        text = out["per_class"]["text"]
        assert (text["tp"], text["fp"], text["fn"]) == (1, 1, 1)
        assert text["precision"] == 0.5 and text["recall"] == 0.5
        assert text["f1"] == 0.5
        table = out["per_class"]["table"]
        assert table["f1"] == 1.0 and table["mean_iou"] == 1.0
        assert out["macro_f1"] == pytest.approx(0.75)
        # micro: tp=2, fp=1, fn=1 -> p = r = 2/3
        assert out["micro_f1"] == pytest.approx(2 / 3)

    def test_class_mismatch_never_matches(self):
        gt = [(box(0, 0, 10, 10), "text")]
        pred = [(box(0, 0, 10, 10), "table")]
        out = layout_eval(pred, gt)
        assert out["micro_f1"] == 0.0
        assert out["per_class"]["text"]["fn"] == 1
        assert out["per_class"]["table"]["fp"] == 1

    def test_iou_threshold_respected(self):
        gt = [(box(0, 0, 10, 10), "text")]
        pred = [(box(0, 0, 10, 6), "text")]  # IoU 0.6
        assert layout_eval(pred, gt, iou_threshold=0.5)["micro_f1"] == 1.0
        assert layout_eval(pred, gt, iou_threshold=0.7)["micro_f1"] == 0.0

    def test_greedy_one_to_one(self):
        gt = [(box(0, 0, 10, 10), "text")]
        pred = [(box(0, 0, 10, 10), "text"), (box(1, 0, 10, 10), "text")]
        out = layout_eval(pred, gt)
        text = out["per_class"]["text"]
        assert (text["tp"], text["fp"], text["fn"]) == (1, 1, 0)
        assert text["mean_iou"] == 1.0

    def test_empty_inputs(self):
        out = layout_eval([], [])
        assert out["per_class"] == {}
        assert out["micro_f1"] == 0.0 and out["macro_f1"] == 0.0


class TestTableStructureEval:
    def test_identical_tables(self):
        t = TableEntity(n_rows=2, n_cols=2, cells=("a", "b", "c", "d"), headers=("h1", "h2"))
        out = table_structure_eval(t, t)
        assert out["exact_shape"] and out["row_match"] and out["col_match"]
        assert out["row_abs_err"] == 0 and out["col_abs_err"] == 0
        assert out["cell_cer"] == 0.0

    def test_shape_mismatch(self):
        gt = TableEntity(n_rows=3, n_cols=2, cells=tuple("abcdef"))
        pred = TableEntity(n_rows=2, n_cols=2, cells=tuple("abcd"))
        out = table_structure_eval(pred, gt)
        assert not out["row_match"] and out["col_match"]
        assert not out["exact_shape"]
        assert out["row_abs_err"] == 1 and out["col_abs_err"] == 0
        assert out["cell_cer"] > 0


class TestFidelityReliability:
    def make_pairs(self):
        # ten reliable extractions and ten poor ones; quality = -cell_cer
        return [(0.9, -0.05)] * 10 + [(0.2, -0.5)] * 10

    def test_requires_ten_pairs(self):
        with pytest.raises(EvalInputError):
            fidelity_reliability([(0.5, -0.1)] * 9)

    def test_perfect_separation(self):
        out = fidelity_reliability(self.make_pairs(), correctness_cutoff=0.1)
        assert out["f1_at_optimal"] == 1.0
        assert out["precision"] == 1.0 and out["recall"] == 1.0
        # smallest swept threshold that excludes every poor extraction
        assert out["optimal_tau"] == pytest.approx(0.21)
        assert out["n"] == 20
        assert len(out["pr_curve"]) == 101
        assert out["spearman"] == pytest.approx(1.0)

    def test_cutoff_changes_labels(self):
        out = fidelity_reliability(self.make_pairs(), correctness_cutoff=0.6)
        # every pair counts as correct: recall 1 at tau 0, and precision 1
        assert out["pr_curve"][0]["recall"] == 1.0
        assert out["pr_curve"][0]["precision"] == 1.0

    def test_constant_fidelity_has_no_correlation(self):
        pairs = [(0.5, -0.05 * i) for i in range(12)]
        out = fidelity_reliability(pairs)
        assert out["spearman"] is None and out["pearson"] is None


class TestRecoveryRate:
    def test_no_failures_not_applicable(self):
        traces = [make_trace(f"r{i}", 0.9) for i in range(5)]
        out = recovery_rate(traces)
        assert out == {
            "failed_n": 0,
            "recovered_n": 0,
            "rate": None,
            "mean_delta_fidelity": 0.0,
            "mean_fidelity_recovered": None,
            "applicable": False,
        }

    def test_mixed_outcomes(self):
        traces = [
            make_trace("pass", 0.9),
            make_trace("recovered", 0.5, fallback_score=0.9),
            make_trace("still_bad", 0.4, fallback_score=0.5),
            make_trace("no_fallback", 0.3),
        ]
        out = recovery_rate(traces)
        assert out["failed_n"] == 3
        assert out["recovered_n"] == 1
        assert out["rate"] == pytest.approx(1 / 3)
        # deltas: 0.4 (recovered), 0.1 (still bad), 0.0 (no fallback pass)
        assert out["mean_delta_fidelity"] == pytest.approx(0.5 / 3)
        assert out["mean_fidelity_recovered"] == pytest.approx(0.9)
        assert out["applicable"]

    def test_fallback_that_regresses(self):
        traces = [make_trace("worse", 0.5, fallback_score=0.4)]
        out = recovery_rate(traces)
        assert out["recovered_n"] == 0
        assert out["mean_delta_fidelity"] == pytest.approx(-0.1)


def answers(scores_by_qid, errors=(), unanswerable=()):
    out = []
    for qid, predicted in scores_by_qid.items():
        out.append(
            {
                "question_id": qid,
                "predicted": predicted,
                "golds": ["truth"],
                "pipeline_error": qid in errors,
            }
        )
    return out


class TestAblationReport:
    def test_full_vs_no_rav_comparison(self):
        per_mode = {
            "full": answers({"q1": "truth", "q2": "truth", "q3": "wrongzz"}),
            "no_rav": answers({"q1": "truth", "q2": "wrongzz", "q3": "wrongzz"}),
        }
        out = ablation_report(per_mode)
        cmp = out["full_vs_no_rav"]
        assert cmp["wins"] == 1 and cmp["losses"] == 0 and cmp["ties"] == 2
        assert out["per_mode"]["full"]["anls"] > out["per_mode"]["no_rav"]["anls"]

    def test_pipeline_errors_score_zero(self):
        per_mode = {"full": answers({"q1": "truth", "q2": "truth"}, errors={"q2"})}
        out = ablation_report(per_mode)
        assert out["per_mode"]["full"]["anls"] == pytest.approx(0.5)
        assert out["per_mode"]["full"]["error_rate"] == 0.5
        assert out["per_mode"]["full"]["answerable_rate"] == 0.5
        assert out["full_vs_no_rav"] is None

    def test_unanswerable_marker(self):
        per_mode = {"full": answers({"q1": "truth", "q2": "N/A"})}
        out = ablation_report(per_mode, unanswerable_marker="N/A")
        assert out["per_mode"]["full"]["answerable_rate"] == 0.5

    def test_mismatched_question_sets_rejected(self):
        per_mode = {
            "full": answers({"q1": "truth"}),
            "no_rav": answers({"q2": "truth"}),
        }
        with pytest.raises(EvalInputError):
            ablation_report(per_mode)

    def test_no_modes_rejected(self):
        with pytest.raises(EvalInputError):
            ablation_report({})
