"""Staged evaluation metrics: layout matching, table-structure accuracy,
fidelity-reliability analysis, fallback recovery accounting, and the
three-mode ablation report.
"""

from __future__ import annotations

from .metrics import (
    UndefinedCorrelationError,
    anls as anls_score,
    cer,
    pearson_r,
    spearman_rho,
)
from .model import BoundingBox, TableEntity
from .reconstruct import structural_signature


class EvalInputError(ValueError):
    """Evaluation inputs do not match the requested task."""


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes."""
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    return inter / (a.area + b.area - inter)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def layout_eval(pred_regions, gt_regions, iou_threshold: float = 0.5):
    """Greedy one-to-one detection matching per class at a fixed IoU.

    ``pred_regions``/``gt_regions`` are sequences of (bbox, class_label).
    Matches are taken in descending IoU order and require IoU >= threshold
    plus equal class. Macro F1 averages classes that have any GT or any
    predictions; a class with GT but zero matches contributes 0.
    """
    classes = sorted({c for _, c in pred_regions} | {c for _, c in gt_regions})
    per_class = {}
    total_tp = total_fp = total_fn = 0
    for cls in classes:
        preds = [b for b, c in pred_regions if c == cls]
        gts = [b for b, c in gt_regions if c == cls]
        pairs = sorted(
            (
                (iou(p, g), pi, gi)
                for pi, p in enumerate(preds)
                for gi, g in enumerate(gts)
            ),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        used_p, used_g = set(), set()
        matched_ious = []
        for value, pi, gi in pairs:
            if value < iou_threshold:
                break
            if pi in used_p or gi in used_g:
                continue
            used_p.add(pi)
            used_g.add(gi)
            matched_ious.append(value)
        tp = len(matched_ious)
        fp = len(preds) - tp
        fn = len(gts) - tp
        precision = tp / len(preds) if preds else 0.0
        recall = tp / len(gts) if gts else 0.0
        per_class[cls] = {
            "precision": precision,
            "recall": recall,
            "f1": _f1(precision, recall),
            "mean_iou": sum(matched_ious) / tp if tp else 0.0,
            "tp": tp,
            "fp": fp,
            "fn": fn,
        }
        total_tp += tp
        total_fp += fp
        total_fn += fn
    micro_p = total_tp / (total_tp + total_fp) if total_tp + total_fp else 0.0
    micro_r = total_tp / (total_tp + total_fn) if total_tp + total_fn else 0.0
    macro = (
        sum(v["f1"] for v in per_class.values()) / len(per_class) if per_class else 0.0
    )
    return {
        "per_class": per_class,
        "micro_f1": _f1(micro_p, micro_r),
        "macro_f1": macro,
    }


def table_structure_eval(pred: TableEntity, gt: TableEntity) -> dict:
    """Shape and content agreement between a predicted and a GT table."""
    _, pred_serialized = structural_signature(pred)
    _, gt_serialized = structural_signature(gt)
    return {
        "row_match": pred.n_rows == gt.n_rows,
        "col_match": pred.n_cols == gt.n_cols,
        "exact_shape": pred.n_rows == gt.n_rows and pred.n_cols == gt.n_cols,
        "row_abs_err": abs(pred.n_rows - gt.n_rows),
        "col_abs_err": abs(pred.n_cols - gt.n_cols),
        "cell_cer": cer(pred_serialized, gt_serialized),
    }


def fidelity_reliability(pairs, correctness_cutoff: float = 0.1):
    """Reliability of fidelity as a quality signal.

    ``pairs`` holds (fidelity, gt_quality) tuples with gt_quality defined
    as negative cell CER. Binary label: correct iff cell_cer <= cutoff.
    Sweeps the gate threshold over 0.00..1.00 in 0.01 steps and reports
    the best F1 point plus the full precision-recall curve.
    """
    pairs = list(pairs)
    if len(pairs) < 10:
        raise EvalInputError("need at least 10 (fidelity, quality) pairs")
    fidelities = [f for f, _ in pairs]
    qualities = [q for _, q in pairs]
    try:
        rho, rho_p = spearman_rho(fidelities, qualities)
    except UndefinedCorrelationError:
        rho, rho_p = None, None
    try:
        r = pearson_r(fidelities, qualities)
    except UndefinedCorrelationError:
        r = None

    labels = [(-q) <= correctness_cutoff for q in qualities]
    curve = []
    best = None
    for step in range(101):
        tau = step / 100.0
        tp = sum(1 for f, ok in zip(fidelities, labels) if f >= tau and ok)
        fp = sum(1 for f, ok in zip(fidelities, labels) if f >= tau and not ok)
        fn = sum(1 for f, ok in zip(fidelities, labels) if f < tau and ok)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = _f1(precision, recall)
        curve.append({"tau": tau, "precision": precision, "recall": recall, "f1": f1})
        if best is None or f1 > best["f1"]:
            best = curve[-1]
    return {
        "spearman": rho,
        "spearman_p": rho_p,
        "pearson": r,
        "optimal_tau": best["tau"],
        "f1_at_optimal": best["f1"],
        "precision": best["precision"],
        "recall": best["recall"],
        "pr_curve": curve,
        "n": len(pairs),
    }


def recovery_rate(traces) -> dict:
    """Fallback recovery accounting over validation traces.

    Failed = primary score below its threshold; recovered = failed AND the
    fallback pass met the threshold. Delta fidelity is fallback minus
    primary over the failed set (failures without a fallback pass count
    as delta 0)."""
    failed = [t for t in traces if t.primary.fidelity.score < t.primary.fidelity.threshold_applied]
    recovered = [
        t
        for t in failed
        if t.fallback is not None
        and t.fallback.fidelity.score >= t.fallback.fidelity.threshold_applied
    ]
    deltas = [
        (t.fallback.fidelity.score - t.primary.fidelity.score) if t.fallback else 0.0
        for t in failed
    ]
    out = {
        "failed_n": len(failed),
        "recovered_n": len(recovered),
        "rate": len(recovered) / len(failed) if failed else None,
        "mean_delta_fidelity": sum(deltas) / len(deltas) if deltas else 0.0,
        "mean_fidelity_recovered": (
            sum(t.fallback.fidelity.score for t in recovered) / len(recovered)
            if recovered
            else None
        ),
        "applicable": bool(failed),
    }
    return out


def ablation_report(per_mode_answers: dict, unanswerable_marker: str = "") -> dict:
    """Aggregate document-QA answers per ablation mode.

    ``per_mode_answers`` maps mode name to a sequence of dicts with keys
    question_id, predicted, golds, pipeline_error. All modes must cover
    the same question set. Pipeline errors score 0 and count as errors;
    answerable means predicted is non-empty and not the unanswerable
    marker."""
    modes = list(per_mode_answers)
    if not modes:
        raise EvalInputError("no modes supplied")
    question_sets = {
        mode: tuple(sorted(a["question_id"] for a in answers))
        for mode, answers in per_mode_answers.items()
    }
    reference = question_sets[modes[0]]
    for mode, qs in question_sets.items():
        if qs != reference:
            raise EvalInputError(f"question set for mode {mode!r} differs")

    per_mode = {}
    per_question = {}
    for mode, answers in per_mode_answers.items():
        scores = []
        answerable = 0
        errors = 0
        for a in sorted(answers, key=lambda x: x["question_id"]):
            if a.get("pipeline_error"):
                score = 0.0
                errors += 1
            else:
                score = anls_score(a["predicted"], a["golds"])
            predicted = a["predicted"].strip()
            if predicted and predicted != unanswerable_marker and not a.get("pipeline_error"):
                answerable += 1
            scores.append(score)
            per_question.setdefault(a["question_id"], {})[mode] = score
        n = len(scores)
        per_mode[mode] = {
            "anls": sum(scores) / n if n else 0.0,
            "answerable_rate": answerable / n if n else 0.0,
            "error_rate": errors / n if n else 0.0,
        }

    comparison = None
    if "full" in per_mode_answers and "no_rav" in per_mode_answers:
        wins = losses = ties = 0
        deltas = []
        for qid, scores in per_question.items():
            delta = scores["full"] - scores["no_rav"]
            deltas.append({"question_id": qid, "delta": delta})
            if delta > 0:
                wins += 1
            elif delta < 0:
                losses += 1
            else:
                ties += 1
        comparison = {"wins": wins, "losses": losses, "ties": ties, "deltas": deltas}
    return {"per_mode": per_mode, "full_vs_no_rav": comparison}
