"""The reconstruction-validation loop: gate, bounded fallback, retention
policy, unconditional image enrichment, context enrichment, and ablation
context derivation from stored traces.
"""

from __future__ import annotations

import os
import re
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import plugins as plugmod
from .compare import image_fidelity, table_fidelity, text_fidelity
from .ingest import RegionManifest, anchor_crops, classify_page_quality, spatial_region_filter
from .model import (
    AnchorCrop,
    EntityRecord,
    FidelityReport,
    ImageEnrichment,
    ImageEntity,
    PassResult,
    PluginCall,
    Provenance,
    RavConfig,
    RegionContext,
    TableEntity,
    TextEntity,
    ValidationTrace,
)
from .plugins import PluginRequest, call_plugin, decode_crop, encode_crop
from .reconstruct import (
    DegenerateTableError,
    ReferenceUnavailableError,
    caption_adjacent,
    reconstruct_image_features,
    reconstruct_table,
    reconstruct_text_reference,
)

ABLATION_MODES = ("full", "gate_only", "no_rav")


class AblationError(ValueError):
    """Ablation contexts can only be derived from full-mode traces."""


@dataclass
class PluginSet:
    """Resolved plugin handles per role; missing roles degrade gracefully."""

    primary_extractor: object = None
    fallback_extractor: object = None
    ocr_reference: object = None
    enricher: object = None

    def get(self, role):
        return getattr(self, role, None)


def resolve_plugins(config: RavConfig, overrides: dict | None = None) -> PluginSet:
    """Build plugin handles from config endpoint specs.

    Endpoints with ``requires_api_key`` are activated only when the
    configured environment variable is set; otherwise the role stays
    empty and the pipeline skips it gracefully.
    """
    handles = dict(overrides or {})
    key_present = bool(os.environ.get(config.api_key_env))
    for role, spec in config.plugins.items():
        if role in handles:
            continue
        if spec.get("requires_api_key") and not key_present:
            continue
        transport = spec.get("transport")
        if transport == "subprocess":
            handles[role] = plugmod.SubprocessHandle(spec["cmd"], plugin_id=spec.get("id"))
        elif transport == "http":
            handles[role] = plugmod.HttpHandle(spec["url"], plugin_id=spec.get("id"))
        else:
            raise ValueError(f"unknown plugin transport {transport!r} for role {role}")
    return PluginSet(**{r: handles.get(r) for r in plugmod.ROLES})


def gate(report: FidelityReport, entity_type: str, config: RavConfig) -> tuple:
    """Apply the per-type acceptance threshold; score >= tau passes.

    Returns (gated_report, gate_fires) where gate_fires means the score is
    below threshold and fallback should be attempted."""
    tau = config.threshold_for(entity_type)
    gated = report.gated(tau)
    return gated, not gated.passed


def _extract_urls(text: str, pattern: str):
    try:
        return tuple(re.findall(pattern, text))
    except re.error:
        return ()


def _payload_to_entity(payload: dict, entity_type: str, config: RavConfig):
    if entity_type == "table":
        return TableEntity.from_json(payload)
    if entity_type == "image":
        return ImageEntity(
            crop=decode_crop(payload["crop"]),
            scale_factor=float(payload.get("scale_factor", 1.0)),
            label=payload.get("label"),
            label_confidence=payload.get("label_confidence"),
        )
    text = str(payload.get("text", ""))
    return TextEntity(
        text=text,
        urls=_extract_urls(text, config.url_pattern),
        latex=payload.get("latex"),
    )


def _placeholder_entity(entity_type: str):
    if entity_type == "table":
        return TableEntity(n_rows=1, n_cols=1, cells=("",))
    if entity_type == "image":
        return ImageEntity(crop=np.full((1, 1), 255, dtype=np.uint8))
    return TextEntity(text="")


def _failure_report(diagnostic: str) -> FidelityReport:
    return FidelityReport(score=0.0, components={"diagnostic_" + diagnostic: 0.0})


@dataclass(frozen=True)
class RegionInputs:
    """Everything one region's validation needs besides plugin calls."""

    region_id: str
    entity_type: str
    bbox: object
    page: object
    anchor: AnchorCrop
    page_text_bboxes: tuple = ()
    ref_shape: tuple | None = None


def _ocr_provider(plugin_set: PluginSet, calls: list):
    handle = plugin_set.ocr_reference
    if handle is None:
        return None

    def provider(anchor: AnchorCrop):
        request = PluginRequest(
            request_id=uuid.uuid4().hex,
            role="ocr_reference",
            entity_type="text",
            crop=encode_crop(anchor.pixels),
        )
        response, duration = call_plugin(handle, request)
        calls.append(PluginCall(role="ocr_reference", duration=duration, ok=response.ok))
        if not response.ok:
            return None
        return response.payload["text"]

    return provider


def _score_pass(entity, inputs: RegionInputs, plugin_set: PluginSet, config: RavConfig, calls: list) -> FidelityReport:
    """Reconstruct and compare one extraction pass against the anchor."""
    etype = inputs.entity_type
    if etype == "table":
        recon = reconstruct_table(entity, inputs.anchor)
        reference = reconstruct_text_reference(
            inputs.anchor, inputs.page, _ocr_provider(plugin_set, calls)
        )
        return table_fidelity(
            recon,
            inputs.anchor,
            reference.text,
            ref_shape=inputs.ref_shape,
            weights=config.weights,
        )
    if etype == "image":
        features = reconstruct_image_features(
            entity,
            inputs.anchor,
            page_text_bboxes=inputs.page_text_bboxes,
            page_height=inputs.page.height,
            max_gap_frac=config.caption_max_gap_frac,
            min_overlap=config.caption_min_overlap,
        )
        return image_fidelity(features, weights=config.weights)
    reference = reconstruct_text_reference(
        inputs.anchor, inputs.page, _ocr_provider(plugin_set, calls)
    )
    return text_fidelity(entity.text, reference)


def validate_entity(
    inputs: RegionInputs,
    plugin_set: PluginSet,
    config: RavConfig,
    context_snippets=(),
    primary_response=None,
):
    """Run the two-pass validation loop for one region.

    Pass 1: extract, reconstruct, compare, gate. If the gate fires and a
    fallback extractor is configured, the fallback re-extracts from the
    UNMODIFIED anchor crop (with context snippets as grounding) and the
    loop repeats once. The higher-fidelity pass wins; ties keep the
    primary. Returns (EntityRecord, ValidationTrace) — context enrichment
    is attached later by the document pipeline.
    """
    calls: list = []
    tau = config.threshold_for(inputs.entity_type)
    anchor_hash = inputs.anchor.sha256

    def error_outcome(diagnostic: str):
        entity = _placeholder_entity(inputs.entity_type)
        report = _failure_report(diagnostic).gated(tau)
        trace = ValidationTrace(
            region_id=inputs.region_id,
            primary=PassResult(entity=entity, fidelity=report, anchor_sha256=anchor_hash),
            fallback=None,
            gate_fired=False,
            final_choice="primary",
            plugin_calls=tuple(calls),
            entity_type=inputs.entity_type,
        )
        record = EntityRecord(
            region_id=inputs.region_id,
            entity_type=inputs.entity_type,
            bbox=inputs.bbox,
            page=inputs.page.page_id,
            entity=entity,
            fidelity=report,
            provenance=Provenance(
                extractor_id="none",
                re_extraction_count=0,
                pass_fidelities=(report,),
                low_confidence=True,
            ),
            flags=(diagnostic,),
        )
        return record, trace

    # pass 1: primary extraction
    if primary_response is None:
        if plugin_set.primary_extractor is None:
            return error_outcome("no_primary_extractor")
        request = PluginRequest(
            request_id=uuid.uuid4().hex,
            role="primary_extractor",
            entity_type=inputs.entity_type,
            crop=encode_crop(inputs.anchor.pixels),
            region_id=inputs.region_id,
        )
        primary_response, duration = call_plugin(plugin_set.primary_extractor, request)
        calls.append(PluginCall(role="primary_extractor", duration=duration, ok=primary_response.ok))
    if not primary_response.ok:
        return error_outcome("primary_plugin_failure")

    try:
        primary_entity = _payload_to_entity(primary_response.payload, inputs.entity_type, config)
        primary_report = _score_pass(primary_entity, inputs, plugin_set, config, calls)
    except ReferenceUnavailableError:
        return error_outcome("reference_unavailable")
    except DegenerateTableError:
        primary_entity = _placeholder_entity(inputs.entity_type)
        primary_report = _failure_report("degenerate_table")

    primary_report, fires = gate(primary_report, inputs.entity_type, config)
    primary_pass = PassResult(
        entity=primary_entity, fidelity=primary_report, anchor_sha256=anchor_hash
    )

    fallback_pass = None
    gate_fired = False
    if fires and plugin_set.fallback_extractor is not None:
        gate_fired = True
        request = PluginRequest(
            request_id=uuid.uuid4().hex,
            role="fallback_extractor",
            entity_type=inputs.entity_type,
            crop=encode_crop(inputs.anchor.pixels),  # same unmodified anchor bytes
            context=tuple(context_snippets),
            region_id=inputs.region_id,
        )
        response, duration = call_plugin(plugin_set.fallback_extractor, request)
        calls.append(PluginCall(role="fallback_extractor", duration=duration, ok=response.ok))
        if response.ok:
            try:
                fb_entity = _payload_to_entity(response.payload, inputs.entity_type, config)
                fb_report = _score_pass(fb_entity, inputs, plugin_set, config, calls)
            except (ReferenceUnavailableError, DegenerateTableError):
                fb_entity = _placeholder_entity(inputs.entity_type)
                fb_report = _failure_report("fallback_scoring_failure")
        else:
            fb_entity = _placeholder_entity(inputs.entity_type)
            fb_report = _failure_report("fallback_plugin_failure")
        fb_report = fb_report.gated(tau)
        fallback_pass = PassResult(
            entity=fb_entity, fidelity=fb_report, anchor_sha256=anchor_hash
        )

    if fallback_pass is not None and fallback_pass.fidelity.score > primary_pass.fidelity.score:
        final_choice = "fallback"
        final_pass = fallback_pass
        extractor_id = plugin_set.fallback_extractor.plugin_id
    else:
        final_choice = "primary"
        final_pass = primary_pass
        extractor_id = (
            plugin_set.primary_extractor.plugin_id
            if plugin_set.primary_extractor is not None
            else "prefetched"
        )

    trace = ValidationTrace(
        region_id=inputs.region_id,
        primary=primary_pass,
        fallback=fallback_pass,
        gate_fired=gate_fired,
        final_choice=final_choice,
        plugin_calls=tuple(calls),
        entity_type=inputs.entity_type,
    )
    pass_fidelities = (primary_pass.fidelity,) + (
        (fallback_pass.fidelity,) if fallback_pass is not None else ()
    )
    record = EntityRecord(
        region_id=inputs.region_id,
        entity_type=inputs.entity_type,
        bbox=inputs.bbox,
        page=inputs.page.page_id,
        entity=final_pass.entity,
        fidelity=final_pass.fidelity,
        provenance=Provenance(
            extractor_id=extractor_id,
            re_extraction_count=1 if fallback_pass is not None else 0,
            pass_fidelities=pass_fidelities,
            low_confidence=final_pass.fidelity.score < tau,
        ),
    )
    return record, trace


def enrich_image(record: EntityRecord, enricher, config: RavConfig) -> EntityRecord:
    """Attach vision enrichment to an image record, pass or fail alike.

    With no enricher handle the record gets a skip flag; malformed
    responses become an enrichment_error flag. The record is always
    emitted."""
    if record.entity_type != "image":
        return record
    from dataclasses import replace

    if enricher is None:
        return replace(record, flags=record.flags + ("enrichment_skipped",))
    request = PluginRequest(
        request_id=uuid.uuid4().hex,
        role="enricher",
        entity_type="image",
        crop=encode_crop(record.entity.crop),
        region_id=record.region_id,
    )
    response, _duration = call_plugin(enricher, request)
    if not response.ok:
        return replace(record, flags=record.flags + ("enrichment_error",))
    enrichment = ImageEnrichment.from_json(response.payload)
    return replace(record, entity=record.entity.with_enrichment(enrichment))


def _reading_order(items):
    """Sort by (y0, x0) of each item's bbox."""
    return sorted(items, key=lambda it: (it[1].y0, it[1].x0))


def enrich_context(record: EntityRecord, region_infos, config: RavConfig, page_height: float) -> EntityRecord:
    """Attach spatial and semantic context.

    ``region_infos`` is a sequence of (region_id, bbox, entity_type, text)
    tuples covering the record's page; text is None for non-text regions.
    """
    from dataclasses import replace

    others = [ri for ri in region_infos if ri[0] != record.region_id]
    center = record.bbox.center
    by_distance = sorted(
        others,
        key=lambda ri: (
            (ri[1].center[0] - center[0]) ** 2 + (ri[1].center[1] - center[1]) ** 2,
            ri[0],
        ),
    )
    neighbors = tuple(ri[0] for ri in by_distance[: config.neighbor_k])

    ordered = _reading_order(region_infos)
    position = next(i for i, ri in enumerate(ordered) if ri[0] == record.region_id)
    preceding = [ri[3] for ri in ordered[:position] if ri[2] == "text" and ri[3]]
    following = [ri[3] for ri in ordered[position + 1 :] if ri[2] == "text" and ri[3]]

    caption = None
    if record.entity_type == "image":
        for ri in ordered:
            if ri[2] == "text" and ri[3] and caption_adjacent(
                record.bbox,
                [ri[1]],
                page_height,
                config.caption_max_gap_frac,
                config.caption_min_overlap,
            ):
                caption = ri[3]
                break

    context = RegionContext(
        neighbors=neighbors,
        caption=caption,
        preceding=tuple(preceding[-2:]),
        following=tuple(following[:2]),
    )
    return replace(record, context=context)


def serialize_entity_for_context(trace_entity, entity_type: str, enrichment: ImageEnrichment | None = None) -> str:
    """Context string for one entity: tables as pipe-delimited rows, images
    as enrichment description + extracted text, text as the raw string."""
    if entity_type == "table":
        rows = []
        if trace_entity.headers:
            rows.append(" | ".join(trace_entity.headers))
        for r in range(trace_entity.n_rows):
            rows.append(" | ".join(trace_entity.row(r)))
        return "\n".join(rows)
    if entity_type == "image":
        if enrichment is None and getattr(trace_entity, "enrichment", None) is not None:
            enrichment = trace_entity.enrichment
        if enrichment is None:
            return ""
        return " ".join(p for p in (enrichment.description, enrichment.extracted_text) if p)
    return trace_entity.text


def derive_ablation_context(
    traces,
    mode: str,
    config: RavConfig,
    enrichments: dict | None = None,
    traces_mode: str = "full",
):
    """Derive the per-mode context strings from one full-mode run's traces.

    full: final entity per region (fallback where used). no_rav: primary
    extraction everywhere, gate ignored. gate_only: only regions whose
    primary fidelity met the threshold, fallback never used. Regions come
    out in region_id order (traces carry no layout geometry).
    """
    if traces_mode != "full":
        raise AblationError(f"ablation requires full-mode traces, got {traces_mode!r}")
    if mode not in ABLATION_MODES:
        raise AblationError(f"unknown ablation mode {mode!r}")
    enrichments = enrichments or {}
    out = []
    for trace in sorted(traces, key=lambda t: t.region_id):
        tau = config.threshold_for(trace.entity_type)
        if mode == "full":
            chosen = trace.final
        elif mode == "no_rav":
            chosen = trace.primary
        else:  # gate_only
            if trace.primary.fidelity.score < tau:
                continue
            chosen = trace.primary
        out.append(
            serialize_entity_for_context(
                chosen.entity, trace.entity_type, enrichments.get(trace.region_id)
            )
        )
    return out


def _context_snippets_for(region_id: str, region_infos, config: RavConfig):
    ordered = _reading_order(region_infos)
    position = next((i for i, ri in enumerate(ordered) if ri[0] == region_id), None)
    if position is None:
        return ()
    preceding = [ri[3] for ri in ordered[:position] if ri[2] == "text" and ri[3]]
    following = [ri[3] for ri in ordered[position + 1 :] if ri[2] == "text" and ri[3]]
    return tuple(preceding[-2:] + following[:2])


def process_document(manifest: RegionManifest, plugin_set: PluginSet, config: RavConfig, jobs: int = 1):
    """Run the full pipeline on one manifest.

    Order: anchor crops from the unprocessed pages, page quality
    classification, spatial containment filter, per-region validation with
    bounded fallback, unconditional image enrichment, context enrichment.
    Returns (records, traces, summary)."""
    anchors = anchor_crops(manifest)
    quality = {
        p.page_id: classify_page_quality(p.load_raster(), p.has_embedded_text)
        for p in manifest.pages
    }
    kept, removed = spatial_region_filter(list(manifest.regions), config.containment_threshold)
    kept = sorted(kept, key=lambda r: r.region_id)

    # phase 1: primary extraction for every surviving region, so fallback
    # context snippets can be computed from primary text extractions
    primary_responses = {}
    primary_calls = {}
    for region in kept:
        if plugin_set.primary_extractor is None:
            primary_responses[region.region_id] = None
            continue
        request = PluginRequest(
            request_id=uuid.uuid4().hex,
            role="primary_extractor",
            entity_type=region.entity_type,
            crop=encode_crop(anchors[region.region_id].pixels),
            region_id=region.region_id,
        )
        response, duration = call_plugin(plugin_set.primary_extractor, request)
        primary_responses[region.region_id] = response
        primary_calls[region.region_id] = PluginCall(
            role="primary_extractor", duration=duration, ok=response.ok
        )

    def primary_text(region):
        resp = primary_responses.get(region.region_id)
        if resp is not None and resp.ok and region.entity_type == "text":
            return str(resp.payload.get("text", ""))
        return None

    infos_by_page = {}
    for region in kept:
        infos_by_page.setdefault(region.page_id, []).append(
            (region.region_id, region.bbox, region.entity_type, primary_text(region))
        )

    def run_region(region):
        page = manifest.page(region.page_id)
        region_infos = infos_by_page[region.page_id]
        payloadshape = region.detector_payload.get("ref_shape")
        inputs = RegionInputs(
            region_id=region.region_id,
            entity_type=region.entity_type,
            bbox=region.bbox,
            page=page,
            anchor=anchors[region.region_id],
            page_text_bboxes=tuple(ri[1] for ri in region_infos if ri[2] == "text"),
            ref_shape=tuple(payloadshape) if payloadshape else None,
        )
        snippets = _context_snippets_for(region.region_id, region_infos, config)
        record, trace = validate_entity(
            inputs,
            plugin_set,
            config,
            context_snippets=snippets,
            primary_response=primary_responses[region.region_id],
        )
        call = primary_calls.get(region.region_id)
        if call is not None:
            trace = ValidationTrace(
                region_id=trace.region_id,
                primary=trace.primary,
                fallback=trace.fallback,
                gate_fired=trace.gate_fired,
                final_choice=trace.final_choice,
                plugin_calls=(call,) + trace.plugin_calls,
                entity_type=trace.entity_type,
            )
        record = enrich_image(record, plugin_set.enricher, config)
        record = enrich_context(record, region_infos, config, page.height)
        return record, trace

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_region, kept))
    else:
        results = [run_region(r) for r in kept]

    records = [r for r, _ in results]
    traces = [t for _, t in results]

    per_type = {}
    for rec in records:
        stats = per_type.setdefault(
            rec.entity_type, {"count": 0, "passed": 0, "fidelity_sum": 0.0}
        )
        stats["count"] += 1
        stats["passed"] += int(rec.fidelity.passed)
        stats["fidelity_sum"] += rec.fidelity.score
    type_summary = {
        etype: {
            "count": s["count"],
            "pass_rate": s["passed"] / s["count"],
            "mean_fidelity": s["fidelity_sum"] / s["count"],
        }
        for etype, s in per_type.items()
    }
    fallback_calls = sum(1 for t in traces if t.gate_fired)
    summary = {
        "document_id": manifest.document_id,
        "mode": "full",
        "regions_total": len(manifest.regions),
        "regions_validated": len(records),
        "regions_filtered": len(removed),
        "regions_dropped_degenerate": manifest.dropped_degenerate,
        "page_quality": {pid: q.label for pid, q in sorted(quality.items())},
        "per_type": dict(sorted(type_summary.items())),
        "fallback_calls": fallback_calls,
        "estimated_fallback_cost": round(fallback_calls * config.cost_per_fallback_call, 10),
        "enrichment_attempted": sum(
            1 for r in records if r.entity_type == "image" and "enrichment_skipped" not in r.flags
        ),
        "mean_fidelity": (
            sum(r.fidelity.score for r in records) / len(records) if records else 0.0
        ),
    }
    return records, traces, summary
