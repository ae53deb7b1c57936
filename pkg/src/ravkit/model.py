"""Domain types shared by the whole pipeline.

All types are immutable values after construction and safe to share
between concurrent workers. Canonical serialization (stable field order,
compact separators) guarantees that equal values produce byte-identical
JSON, which is what makes trace files reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

ENTITY_TYPES = ("table", "image", "text", "formula", "url")

QUALITY_CLASSES = (
    "clean",
    "scanned_clean",
    "scanned_degraded",
    "photographed",
    "handwritten",
    "overlapping",
)

IMAGE_TYPES = (
    "photograph",
    "chart",
    "diagram",
    "flowchart",
    "logo",
    "screenshot",
    "other",
)

# 1.01 is the "always-on fallback" sentinel used by cost experiments:
# every score <= 1.0 fails the gate, so fallback fires for all entities.
MAX_THRESHOLD = 1.01


class ModelError(ValueError):
    """Raised when a value violates a structural invariant at construction."""


def canonical_json(obj) -> str:
    """Serialize to canonical JSON: sorted keys, compact, UTF-8 verbatim."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def raster_sha256(pixels: np.ndarray) -> str:
    """Content hash of a raster, including its shape."""
    h = hashlib.sha256()
    h.update(str(pixels.shape).encode())
    h.update(np.ascontiguousarray(pixels).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, top-left origin, x0 < x1 and y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ModelError(f"degenerate bounding box {self.as_tuple()}")

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self):
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def to_json(self):
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    @classmethod
    def from_json(cls, d) -> "BoundingBox":
        return cls(float(d["x0"]), float(d["y0"]), float(d["x1"]), float(d["y1"]))


@dataclass(frozen=True)
class AnchorCrop:
    """Immutable pixel crop taken from the unprocessed page at ingestion.

    This is the ground-truth reference every comparator anchors against.
    It is created exactly once per region and never mutated afterwards.
    """

    pixels: np.ndarray
    source_page: str
    bbox: BoundingBox

    def __post_init__(self):
        if self.pixels.size == 0:
            raise ModelError("empty anchor crop")
        self.pixels.setflags(write=False)

    @property
    def sha256(self) -> str:
        return raster_sha256(self.pixels)


@dataclass(frozen=True)
class QualityClass:
    label: str
    skew_degrees: float = 0.0

    def __post_init__(self):
        if self.label not in QUALITY_CLASSES:
            raise ModelError(f"unknown quality class {self.label!r}")
        if not -45.0 <= self.skew_degrees <= 45.0:
            raise ModelError(f"skew {self.skew_degrees} outside [-45, 45]")


@dataclass(frozen=True)
class TableEntity:
    n_rows: int
    n_cols: int
    cells: tuple  # row-major strings, length n_rows * n_cols
    headers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "headers", tuple(self.headers))

    def violations(self):
        out = []
        if self.n_rows < 1 or self.n_cols < 1:
            out.append("table shape must be at least 1x1")
        if len(self.cells) != self.n_rows * self.n_cols:
            out.append("cells length mismatch")
        if self.headers and len(self.headers) != self.n_cols:
            out.append("headers length mismatch")
        return out

    def row(self, i):
        return self.cells[i * self.n_cols : (i + 1) * self.n_cols]

    def to_json(self):
        return {
            "kind": "table",
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "headers": list(self.headers),
            "cells": list(self.cells),
        }

    @classmethod
    def from_json(cls, d) -> "TableEntity":
        return cls(
            n_rows=int(d["n_rows"]),
            n_cols=int(d["n_cols"]),
            cells=tuple(str(c) for c in d["cells"]),
            headers=tuple(str(h) for h in d.get("headers", [])),
        )


@dataclass(frozen=True)
class ImageEnrichment:
    image_type: str
    description: str = ""
    extracted_text: str = ""
    structured_data: dict | None = None

    def __post_init__(self):
        if self.image_type not in IMAGE_TYPES:
            raise ModelError(f"unknown image_type {self.image_type!r}")

    def to_json(self):
        return {
            "image_type": self.image_type,
            "description": self.description,
            "extracted_text": self.extracted_text,
            "structured_data": self.structured_data,
        }

    @classmethod
    def from_json(cls, d) -> "ImageEnrichment":
        return cls(
            image_type=str(d["image_type"]),
            description=str(d.get("description", "")),
            extracted_text=str(d.get("extracted_text", "")),
            structured_data=d.get("structured_data"),
        )


@dataclass(frozen=True)
class ImageEntity:
    crop: np.ndarray
    scale_factor: float = 1.0
    label: str | None = None
    label_confidence: float | None = None
    enrichment: ImageEnrichment | None = None

    def __post_init__(self):
        if self.crop.size == 0:
            raise ModelError("empty image crop")
        self.crop.setflags(write=False)

    def violations(self):
        return []

    def with_enrichment(self, enrichment: ImageEnrichment | None) -> "ImageEntity":
        return replace(self, enrichment=enrichment)

    def to_json(self):
        # Crops ride along as lossless base64 PNG so traces round-trip
        # pixel-exact; the content hash gives cheap identity checks.
        return {
            "kind": "image",
            "crop": _encode_png(self.crop),
            "crop_sha256": raster_sha256(self.crop),
            "scale_factor": self.scale_factor,
            "label": self.label,
            "label_confidence": self.label_confidence,
            "enrichment": self.enrichment.to_json() if self.enrichment else None,
        }

    @classmethod
    def from_json(cls, d) -> "ImageEntity":
        return cls(
            crop=_decode_png(d["crop"]),
            scale_factor=float(d.get("scale_factor", 1.0)),
            label=d.get("label"),
            label_confidence=d.get("label_confidence"),
            enrichment=(
                ImageEnrichment.from_json(d["enrichment"]) if d.get("enrichment") else None
            ),
        )


@dataclass(frozen=True)
class TextEntity:
    text: str
    urls: tuple = ()
    latex: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "urls", tuple(self.urls))

    def violations(self):
        return []

    def to_json(self):
        return {
            "kind": "text",
            "text": self.text,
            "urls": list(self.urls),
            "latex": self.latex,
        }

    @classmethod
    def from_json(cls, d) -> "TextEntity":
        return cls(
            text=str(d["text"]),
            urls=tuple(str(u) for u in d.get("urls", [])),
            latex=d.get("latex"),
        )


def _encode_png(pixels: np.ndarray) -> str:
    im = Image.fromarray(np.asarray(pixels).astype(np.uint8))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_png(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as im:
        return np.asarray(im)


def entity_to_json(entity):
    return entity.to_json()


def entity_from_json(d):
    kind = d.get("kind")
    if kind == "table":
        return TableEntity.from_json(d)
    if kind == "text":
        return TextEntity.from_json(d)
    if kind == "image":
        return ImageEntity.from_json(d)
    raise ModelError(f"unknown entity kind {kind!r}")


def entity_matches_type(entity, entity_type: str) -> bool:
    """Formula and url payloads are carried as TextEntity."""
    if entity_type == "table":
        return isinstance(entity, TableEntity)
    if entity_type == "image":
        return isinstance(entity, ImageEntity)
    if entity_type in ("text", "formula", "url"):
        return isinstance(entity, TextEntity)
    return False


@dataclass(frozen=True)
class FidelityReport:
    """Score in [0, 1] plus per-component breakdown and gate outcome."""

    score: float
    components: dict = field(default_factory=dict)
    threshold_applied: float = 0.0
    passed: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ModelError(f"fidelity score {self.score} outside [0,1]")

    def gated(self, threshold: float) -> "FidelityReport":
        return replace(
            self, threshold_applied=threshold, passed=self.score >= threshold
        )

    def to_json(self):
        return {
            "score": self.score,
            "components": dict(sorted(self.components.items())),
            "threshold_applied": self.threshold_applied,
            "passed": self.passed,
        }

    @classmethod
    def from_json(cls, d) -> "FidelityReport":
        return cls(
            score=float(d["score"]),
            components=dict(d.get("components", {})),
            threshold_applied=float(d.get("threshold_applied", 0.0)),
            passed=bool(d.get("passed", False)),
        )


@dataclass(frozen=True)
class Provenance:
    extractor_id: str
    re_extraction_count: int
    pass_fidelities: tuple  # FidelityReport, length 1 or 2
    low_confidence: bool

    def __post_init__(self):
        object.__setattr__(self, "pass_fidelities", tuple(self.pass_fidelities))
        if self.re_extraction_count not in (0, 1):
            raise ModelError("re_extraction_count must be 0 or 1")
        if len(self.pass_fidelities) not in (1, 2):
            raise ModelError("pass_fidelities must hold 1 or 2 reports")

    def to_json(self):
        return {
            "extractor_id": self.extractor_id,
            "re_extraction_count": self.re_extraction_count,
            "pass_fidelities": [f.to_json() for f in self.pass_fidelities],
            "low_confidence": self.low_confidence,
        }


@dataclass(frozen=True)
class RegionContext:
    neighbors: tuple = ()
    caption: str | None = None
    preceding: tuple = ()
    following: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "neighbors", tuple(self.neighbors))
        object.__setattr__(self, "preceding", tuple(self.preceding))
        object.__setattr__(self, "following", tuple(self.following))
        if len(self.preceding) > 2 or len(self.following) > 2:
            raise ModelError("context keeps at most 2 blocks per side")

    def to_json(self):
        return {
            "neighbors": list(self.neighbors),
            "caption": self.caption,
            "preceding": list(self.preceding),
            "following": list(self.following),
        }


@dataclass(frozen=True)
class EntityRecord:
    """Final output unit: extraction + fidelity + provenance + context."""

    region_id: str
    entity_type: str
    bbox: BoundingBox
    page: str
    entity: object
    fidelity: FidelityReport
    provenance: Provenance
    context: RegionContext = field(default_factory=RegionContext)
    flags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(self.flags))

    def to_json(self):
        return {
            "region_id": self.region_id,
            "entity_type": self.entity_type,
            "bbox": self.bbox.to_json(),
            "page": self.page,
            "entity": entity_to_json(self.entity),
            "fidelity": self.fidelity.to_json(),
            "provenance": self.provenance.to_json(),
            "context": self.context.to_json(),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class PassResult:
    entity: object
    fidelity: FidelityReport
    anchor_sha256: str = ""

    def to_json(self):
        return {
            "entity": entity_to_json(self.entity),
            "fidelity": self.fidelity.to_json(),
            "anchor_sha256": self.anchor_sha256,
        }


@dataclass(frozen=True)
class PluginCall:
    role: str
    duration: float
    ok: bool

    def to_json(self):
        return {"role": self.role, "duration": self.duration, "ok": self.ok}


@dataclass(frozen=True)
class ValidationTrace:
    """Per-region log of both passes, the gate decision, and plugin calls."""

    region_id: str
    primary: PassResult
    fallback: PassResult | None
    gate_fired: bool
    final_choice: str  # "primary" | "fallback"
    plugin_calls: tuple = ()
    entity_type: str = "text"

    def __post_init__(self):
        object.__setattr__(self, "plugin_calls", tuple(self.plugin_calls))
        if (self.fallback is not None) != self.gate_fired:
            raise ModelError("fallback present iff gate_fired")
        if self.final_choice not in ("primary", "fallback"):
            raise ModelError(f"bad final_choice {self.final_choice!r}")
        if self.final_choice == "fallback" and self.fallback is None:
            raise ModelError("final_choice=fallback without a fallback pass")
        if self.fallback is not None:
            best = "fallback" if self.fallback.fidelity.score > self.primary.fidelity.score else "primary"
            if self.final_choice != best:
                raise ModelError("final_choice must maximize fidelity (tie keeps primary)")

    @property
    def final(self) -> PassResult:
        return self.fallback if self.final_choice == "fallback" else self.primary

    def to_json(self):
        return {
            "region_id": self.region_id,
            "primary": self.primary.to_json(),
            "fallback": self.fallback.to_json() if self.fallback else None,
            "gate_fired": self.gate_fired,
            "final_choice": self.final_choice,
            "plugin_calls": [c.to_json() for c in self.plugin_calls],
            "entity_type": self.entity_type,
        }

    def serialize(self) -> str:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, d) -> "ValidationTrace":
        def pass_from(p):
            return PassResult(
                entity=entity_from_json(p["entity"]),
                fidelity=FidelityReport.from_json(p["fidelity"]),
                anchor_sha256=p.get("anchor_sha256", ""),
            )

        return cls(
            region_id=str(d["region_id"]),
            primary=pass_from(d["primary"]),
            fallback=pass_from(d["fallback"]) if d.get("fallback") else None,
            gate_fired=bool(d["gate_fired"]),
            final_choice=str(d["final_choice"]),
            plugin_calls=tuple(
                PluginCall(c["role"], float(c["duration"]), bool(c["ok"]))
                for c in d.get("plugin_calls", [])
            ),
            entity_type=str(d.get("entity_type", "text")),
        )

    @classmethod
    def parse(cls, text: str) -> "ValidationTrace":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"corrupted trace: {exc}") from exc
        return cls.from_json(d)


def trace_roundtrip(trace: ValidationTrace) -> ValidationTrace:
    """Serialize then parse; the result equals the input, byte-for-byte
    when re-serialized. Malformed input raises ModelError."""
    out = ValidationTrace.parse(trace.serialize())
    if out.serialize() != trace.serialize():
        raise ModelError("trace serialization is not canonical")
    return out


DEFAULT_THRESHOLDS = {
    "table": 0.75,
    "image": 0.70,
    "text": 0.85,
    "formula": 0.85,
    "url": 0.85,
}

DEFAULT_WEIGHTS = {
    "table_visual": {"ssim": 0.4, "struct": 0.6},
    "table_struct": {"shape": 0.2, "cells": 0.8},
    "image": {"phash": 0.6, "sharpness": 0.3, "caption": 0.1},
}

DEFAULT_URL_PATTERN = r"https?://[^\s\)\]\}>]+"


@dataclass(frozen=True)
class RavConfig:
    """Run configuration: gate thresholds, formula weights, plugin wiring."""

    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    weights: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_WEIGHTS.items()})
    containment_threshold: float = 0.85
    caption_max_gap_frac: float = 0.05
    caption_min_overlap: float = 0.3
    neighbor_k: int = 3
    cost_per_fallback_call: float = 0.02
    seed: int = 0
    url_pattern: str = DEFAULT_URL_PATTERN
    api_key_env: str = "RAV_API_KEY"
    plugins: dict = field(default_factory=dict)

    def __post_init__(self):
        for etype, tau in self.thresholds.items():
            if etype not in ENTITY_TYPES:
                raise ModelError(f"threshold for unknown entity type {etype!r}")
            if not 0.0 <= tau <= MAX_THRESHOLD:
                raise ModelError(f"threshold {tau} for {etype} outside [0, {MAX_THRESHOLD}]")
        for name, w in self.weights.items():
            total = sum(w.values())
            if abs(total - 1.0) > 1e-9:
                raise ModelError(f"weights {name} sum to {total}, expected 1")

    def threshold_for(self, entity_type: str) -> float:
        return self.thresholds[entity_type]

    @classmethod
    def from_dict(cls, d: dict) -> "RavConfig":
        base = cls()
        thresholds = dict(base.thresholds)
        thresholds.update(d.get("thresholds", {}))
        weights = {k: dict(v) for k, v in base.weights.items()}
        for k, v in d.get("weights", {}).items():
            weights[k] = dict(v)
        return cls(
            thresholds=thresholds,
            weights=weights,
            containment_threshold=float(d.get("containment_threshold", base.containment_threshold)),
            caption_max_gap_frac=float(d.get("caption_max_gap_frac", base.caption_max_gap_frac)),
            caption_min_overlap=float(d.get("caption_min_overlap", base.caption_min_overlap)),
            neighbor_k=int(d.get("neighbor_k", base.neighbor_k)),
            cost_per_fallback_call=float(d.get("cost_per_fallback_call", base.cost_per_fallback_call)),
            seed=int(d.get("seed", base.seed)),
            url_pattern=str(d.get("url_pattern", base.url_pattern)),
            api_key_env=str(d.get("api_key_env", base.api_key_env)),
            plugins=dict(d.get("plugins", {})),
        )


def validate_record(record: EntityRecord) -> list:
    """Check every record-level invariant; violations are data, not errors."""
    out = []
    if record.entity_type not in ENTITY_TYPES:
        out.append(f"unknown entity type {record.entity_type!r}")
    if not entity_matches_type(record.entity, record.entity_type):
        out.append("entity variant does not match entity_type")
    if hasattr(record.entity, "violations"):
        out.extend(record.entity.violations())
    tau = record.fidelity.threshold_applied
    if record.fidelity.passed != (record.fidelity.score >= tau):
        out.append("passed flag inconsistent with threshold")
    if record.provenance.low_confidence != (record.fidelity.score < tau):
        out.append("low_confidence inconsistent")
    if record.provenance.re_extraction_count + 1 != len(record.provenance.pass_fidelities):
        out.append("pass_fidelities length inconsistent with re_extraction_count")
    if isinstance(record.entity, ImageEntity) and record.entity.enrichment is not None:
        if record.entity.enrichment.image_type not in IMAGE_TYPES:
            out.append("enrichment image_type outside closed set")
    try:
        len(record.context.preceding)
    except TypeError:
        out.append("context preceding not a sequence")
    return out
