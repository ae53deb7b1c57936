"""End-to-end acceptance gate: metric oracles, correlation properties,
the worked-example replay, recovery/ablation/cost accounting, loop
invariants under fuzzing, the containment filter, and determinism."""

import io
import json

import numpy as np
import pytest
from PIL import Image

from ravkit import (
    AnchorCrop,
    BoundingBox,
    CorruptionSpec,
    PluginSet,
    RavConfig,
    Region,
    cer,
    derive_ablation_context,
    hamming64,
    levenshtein,
    mock_extract_table,
    normalize_text,
    phash64,
    process_document,
    recovery_rate,
    replay_walkthrough,
    run_walkthrough,
    spatial_region_filter,
    spearman_rho,
    ssim_binarized,
    table_fidelity,
    validate_record,
)
from ravkit.cli import main as cli_main
from ravkit.evalkit import table_structure_eval
from ravkit.plugins import scripted_extractor
from ravkit.reconstruct import reconstruct_table, structural_signature
from ravkit.walkthrough import build_walkthrough
from ravkit.model import TableEntity

from conftest import corrupt, grid_text_manifest, make_trace, random_words


# 1. metric oracles -----------------------------------------------------------


def _lev_oracle(a, b):
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d[m][n]


def test_levenshtein_and_cer_match_bruteforce_oracle(rng):
    alphabet = list("abcde é")
    for _ in range(1000):
        a = "".join(rng.choice(alphabet, int(rng.integers(0, 31))))
        b = "".join(rng.choice(alphabet, int(rng.integers(0, 31))))
        expected = _lev_oracle(a, b)
        assert levenshtein(a, b) == expected
        na, nb = normalize_text(a), normalize_text(b)
        assert cer(a, b) == _lev_oracle(na, nb) / max(len(nb), 1)


def _rank_oracle(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _spearman_oracle(x, y):
    rx, ry = _rank_oracle(x), _rank_oracle(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = (
        sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)
    ) ** 0.5
    return num / den


def test_spearman_matches_rank_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(3, 11))
        x = [float(v) for v in rng.integers(0, 6, n)]  # small range forces ties
        y = [float(v) for v in rng.integers(0, 6, n)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        rho, _ = spearman_rho(x, y)
        assert rho == pytest.approx(_spearman_oracle(x, y), abs=1e-12)


# 2. image kernels ------------------------------------------------------------


def _synthetic_image(rng, size=128):
    yy, xx = np.mgrid[0:size, 0:size]
    img = (xx * 255 / size).astype(np.uint8)
    cy, cx, r = rng.integers(30, size - 30), rng.integers(30, size - 30), rng.integers(10, 25)
    img[(yy - cy) ** 2 + (xx - cx) ** 2 < r**2] = int(rng.integers(0, 60))
    img[:: int(rng.integers(9, 14)), :] = 240
    return img


def _jpeg_q90(img):
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="JPEG", quality=90)
    return np.asarray(Image.open(io.BytesIO(buf.getvalue())))


def test_ssim_identity_and_symmetry(rng):
    for _ in range(50):
        h, w = int(rng.integers(24, 80)), int(rng.integers(24, 80))
        a = rng.integers(0, 256, (h, w)).astype(np.uint8)
        b = rng.integers(0, 256, (h, w)).astype(np.uint8)
        assert ssim_binarized(a, a) == pytest.approx(1.0, abs=1e-9)
        assert ssim_binarized(a, b) == pytest.approx(ssim_binarized(b, a), abs=1e-9)


def test_phash_stable_under_recompression_and_flips_under_inversion(rng):
    for _ in range(10):
        img = _synthetic_image(rng)
        h = phash64(img)
        assert hamming64(h, phash64(_jpeg_q90(img))) <= 6
        assert hamming64(h, phash64(255 - img)) >= 32


# 3. fidelity-quality correlation ---------------------------------------------


def test_table_fidelity_tracks_cell_quality(rng, config):
    anchor = AnchorCrop(
        pixels=np.full((60, 120), 255, dtype=np.uint8),
        source_page="p0",
        bbox=BoundingBox(0, 0, 120, 60),
    )
    fidelities, qualities = [], []
    for i in range(200):
        n_rows, n_cols = int(rng.integers(3, 8)), int(rng.integers(2, 6))
        cells = tuple(
            random_words(rng, 2) for _ in range(n_rows * n_cols)
        )
        gt = TableEntity(n_rows=n_rows, n_cols=n_cols, cells=cells)
        eps = float(rng.uniform(0.0, 1.0))
        pred = mock_extract_table(
            gt,
            CorruptionSpec(
                epsilon=eps,
                p_row_merge=0.3 * eps,
                p_col_merge=0.3 * eps,
                p_row_drop=0.3 * eps,
                seed=i,
            ),
        )
        _, gt_serialized = structural_signature(gt)
        report = table_fidelity(
            reconstruct_table(pred, anchor),
            anchor,
            gt_serialized,
            ref_shape=(gt.n_rows, gt.n_cols),
            skip_visual=True,
            weights=config.weights,
        )
        fidelities.append(report.score)
        qualities.append(-table_structure_eval(pred, gt)["cell_cer"])
    rho, _ = spearman_rho(fidelities, qualities)
    assert rho >= 0.8


# 4. worked-example golden replay ---------------------------------------------


def test_walkthrough_replay_matches_pinned_outcomes():
    report, diffs = replay_walkthrough()
    assert diffs == []
    assert report["matched"] is True
    records, traces, summary = run_walkthrough()
    fired = [t.region_id for t in traces if t.gate_fired]
    assert fired == ["0_7"]
    low = [r.region_id for r in records if r.provenance.low_confidence]
    assert low == ["0_7"]
    for r in records:
        assert r.provenance.re_extraction_count == (1 if r.region_id == "0_7" else 0)
    assert summary["fallback_calls"] == 1


# 5. recovery accounting ------------------------------------------------------


def test_recovery_rate_on_synthetic_trace_fixture():
    traces = []
    deltas = []
    for i in range(194):
        primary = 0.50 + 0.30 * i / 194  # all below the 0.85 gate
        fallback = 0.90 if i < 74 else primary + 0.05
        traces.append(make_trace(f"f{i:03d}", primary, fallback))
        deltas.append(fallback - primary)
    for i in range(56):
        traces.append(make_trace(f"p{i:03d}", 0.95))
    report = recovery_rate(traces)
    assert report["failed_n"] == 194
    assert report["recovered_n"] == 74
    assert report["rate"] == pytest.approx(0.381, abs=1e-3)
    assert report["mean_delta_fidelity"] == sum(deltas) / len(deltas)


# 6. ablation direction -------------------------------------------------------


def test_gate_only_coverage_collapses_and_full_dominates(config):
    traces = []
    for i in range(60):
        traces.append(make_trace(f"a{i:03d}", 0.90))
    for i in range(20):
        traces.append(make_trace(f"b{i:03d}", 0.50, 0.90))  # recovered
    for i in range(20):
        traces.append(make_trace(f"c{i:03d}", 0.50, 0.60))  # still failing
    full = derive_ablation_context(traces, "full", config)
    gate_only = derive_ablation_context(traces, "gate_only", config)
    no_rav = derive_ablation_context(traces, "no_rav", config)
    assert len(full) == len(no_rav) == 100
    assert len(gate_only) == 60
    full_mean = sum(t.final.fidelity.score for t in traces) / len(traces)
    no_rav_mean = sum(t.primary.fidelity.score for t in traces) / len(traces)
    assert full_mean >= no_rav_mean


# 7. selective-cost model -----------------------------------------------------


def _cost_corpus(rng):
    refs = [random_words(rng, 4) for _ in range(500)]
    manifest, _ = grid_text_manifest(refs, page_w=2000, page_h=2500, cell_w=100, cell_h=100)
    rids = sorted(r.region_id for r in manifest.regions)
    fail_ids = set(rids[:145])
    primary = {
        rid: ("#" * len(refs[i]) if rid in fail_ids else refs[i])
        for i, rid in enumerate(rids)
    }
    fallback = {rid: refs[i] for i, rid in enumerate(rids)}
    plugin_set = PluginSet(
        primary_extractor=scripted_extractor(primary, plugin_id="mock-primary"),
        fallback_extractor=scripted_extractor(fallback, plugin_id="mock-fallback"),
    )
    return manifest, plugin_set


def test_fallback_cost_accounting(rng):
    manifest, plugin_set = _cost_corpus(rng)
    _, traces, summary = process_document(manifest, plugin_set, RavConfig())
    assert summary["fallback_calls"] == 145
    assert summary["estimated_fallback_cost"] == 2.90
    assert sum(1 for t in traces if t.gate_fired) == 145

    always_on = RavConfig(
        thresholds={k: 1.01 for k in ("table", "image", "text", "formula", "url")}
    )
    _, _, summary_on = process_document(manifest, plugin_set, always_on)
    assert summary_on["fallback_calls"] == 500


# 8. loop invariants under fuzzing --------------------------------------------


def test_loop_invariants_fuzz(rng):
    refs = [random_words(rng, 5) for _ in range(1000)]
    manifest, _ = grid_text_manifest(refs, page_w=2500, page_h=2000, cell_w=50, cell_h=50)
    rids = sorted(r.region_id for r in manifest.regions)
    primary = {rid: corrupt(refs[i], float(rng.uniform(0, 0.6)), rng) for i, rid in enumerate(rids)}
    fallback = {rid: corrupt(refs[i], float(rng.uniform(0, 0.6)), rng) for i, rid in enumerate(rids)}
    plugin_set = PluginSet(
        primary_extractor=scripted_extractor(primary),
        fallback_extractor=scripted_extractor(fallback),
    )
    config = RavConfig()
    records, traces, _ = process_document(manifest, plugin_set, config)
    assert len(traces) == 1000
    tau = config.threshold_for("text")
    for record, trace in zip(records, traces):
        fallback_calls = [c for c in trace.plugin_calls if c.role == "fallback_extractor"]
        assert len(fallback_calls) <= 1
        if trace.fallback is not None:
            assert trace.fallback.anchor_sha256 == trace.primary.anchor_sha256
            best = max(trace.primary.fidelity.score, trace.fallback.fidelity.score)
            assert trace.final.fidelity.score == best
            if trace.fallback.fidelity.score == trace.primary.fidelity.score:
                assert trace.final_choice == "primary"
        assert record.provenance.low_confidence == (record.fidelity.score < tau)
        assert validate_record(record) == []


# 9. containment filter -------------------------------------------------------


def test_containment_filter_removes_exactly_the_contained_regions():
    figure = Region("fig", "p0", BoundingBox(0, 0, 500, 500), "image", {})
    table = Region("tab", "p0", BoundingBox(500, 500, 1000, 1000), "table", {})
    regions = [figure, table]
    inside_ids = []
    for i in range(13):
        outer = figure.bbox if i % 2 == 0 else table.bbox
        x0 = outer.x0 + 20 + 10 * i
        y0 = outer.y0 + 20 + 10 * i
        rid = f"in{i:02d}"
        inside_ids.append(rid)
        regions.append(Region(rid, "p0", BoundingBox(x0, y0, x0 + 80, y0 + 40), "text", {}))
    for i in range(7):
        regions.append(
            Region(f"out{i}", "p0", BoundingBox(520 + 40 * i, 20, 550 + 40 * i, 60), "text", {})
        )
    kept, removed = spatial_region_filter(regions, 0.85)
    assert sorted(r.region_id for r in removed) == sorted(inside_ids)
    assert len(kept) == 9
    kept_again, removed_again = spatial_region_filter(kept, 0.85)
    assert removed_again == []
    assert [r.region_id for r in kept_again] == [r.region_id for r in kept]


# 10. determinism -------------------------------------------------------------


def test_validate_runs_are_byte_identical(tmp_path):
    fixture = build_walkthrough()
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps(fixture.manifest_doc), encoding="utf-8")
    for run in ("run1", "run2"):
        code = cli_main(
            [
                "validate",
                "--manifest",
                str(manifest_path),
                "--out",
                str(tmp_path / run),
                "--seed",
                "7",
            ]
        )
        assert code == 0
    for name in ("traces.jsonl", "records.jsonl", "summary.json"):
        assert (tmp_path / "run1" / name).read_bytes() == (tmp_path / "run2" / name).read_bytes()


def test_pipeline_traces_serialize_identically_across_rebuilds():
    _, traces_a, _ = run_walkthrough()
    build_walkthrough.cache_clear()
    _, traces_b, _ = run_walkthrough()
    assert [t.serialize() for t in traces_a] == [t.serialize() for t in traces_b]
