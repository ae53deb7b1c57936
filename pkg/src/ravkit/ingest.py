"""Manifest ingestion: coordinate normalization, immutable crop anchoring,
spatial containment filtering, and the heuristic page quality classifier.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .model import AnchorCrop, BoundingBox, ENTITY_TYPES, QualityClass


class ManifestError(ValueError):
    """Manifest cannot be ingested (parse failure, bad references, bad boxes)."""


@dataclass(frozen=True)
class TextSpan:
    bbox: BoundingBox
    text: str


@dataclass(frozen=True)
class PageDescriptor:
    page_id: str
    width: int
    height: int
    raster: np.ndarray | None = None
    raster_path: str | None = None
    origin_convention: str = "top_left"
    embedded_text: tuple = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ManifestError(f"page {self.page_id}: non-positive dimensions")
        object.__setattr__(self, "embedded_text", tuple(self.embedded_text))
        if self.raster is not None:
            self.raster.setflags(write=False)

    def load_raster(self) -> np.ndarray:
        if self.raster is not None:
            return self.raster
        if self.raster_path is None:
            raise ManifestError(f"page {self.page_id}: no raster available")
        try:
            with Image.open(self.raster_path) as im:
                arr = np.asarray(im.convert("L"))
        except OSError as exc:
            raise ManifestError(f"page {self.page_id}: raster load failed: {exc}") from exc
        arr.setflags(write=False)
        return arr

    @property
    def has_embedded_text(self) -> bool:
        return len(self.embedded_text) > 0


@dataclass(frozen=True)
class Region:
    region_id: str
    page_id: str
    bbox: BoundingBox
    entity_type: str
    detector_payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RegionManifest:
    document_id: str
    pages: tuple
    regions: tuple
    dropped_degenerate: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))
        object.__setattr__(self, "regions", tuple(self.regions))

    def page(self, page_id: str) -> PageDescriptor:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise ManifestError(f"unresolvable page id {page_id!r}")


def _decode_inline_png(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("L"))


def _normalize_bbox(raw, page: PageDescriptor) -> BoundingBox | None:
    """Flip bottom-left boxes to top-left; None for degenerate boxes."""
    x0, y0, x1, y1 = (float(raw[k]) for k in ("x0", "y0", "x1", "y1"))
    if page.origin_convention == "bottom_left":
        y0, y1 = page.height - y1, page.height - y0
    if x0 >= x1 or y0 >= y1:
        return None
    eps = 1e-6
    if x0 < -eps or y0 < -eps or x1 > page.width + eps or y1 > page.height + eps:
        raise ManifestError(
            f"bbox ({x0},{y0},{x1},{y1}) outside page {page.page_id} "
            f"({page.width}x{page.height}) after normalization"
        )
    return BoundingBox(max(x0, 0.0), max(y0, 0.0), min(x1, page.width), min(y1, page.height))


def parse_manifest(doc: dict) -> RegionManifest:
    """Build a normalized manifest from a parsed JSON document.

    All boxes come out in top-left origin; degenerate regions are dropped
    and counted in ``dropped_degenerate``.
    """
    pages = []
    for p in doc.get("pages", []):
        raster = None
        if "raster_base64" in p:
            raster = _decode_inline_png(p["raster_base64"])
        pages.append(
            PageDescriptor(
                page_id=str(p["page_id"]),
                width=int(p["width"]),
                height=int(p["height"]),
                raster=raster,
                raster_path=p.get("raster_path"),
                origin_convention=p.get("origin_convention", "top_left"),
                embedded_text=(),  # attached below, after normalization
            )
        )
    by_id = {p.page_id: p for p in pages}
    if len(by_id) != len(pages):
        raise ManifestError("duplicate page ids")

    # embedded text spans share the page's origin convention
    for p_doc, pid in zip(doc.get("pages", []), list(by_id)):
        spans = []
        for s in p_doc.get("embedded_text", []):
            bbox = _normalize_bbox(s["bbox"], by_id[pid])
            if bbox is not None:
                spans.append(TextSpan(bbox=bbox, text=str(s["text"])))
        if spans:
            by_id[pid] = replace(by_id[pid], embedded_text=tuple(spans))
    pages = list(by_id.values())

    regions = []
    seen = set()
    dropped = 0
    for r in doc.get("regions", []):
        rid = str(r["region_id"])
        if rid in seen:
            raise ManifestError(f"duplicate region id {rid!r}")
        seen.add(rid)
        pid = str(r["page_id"])
        if pid not in by_id:
            raise ManifestError(f"region {rid}: unresolvable page id {pid!r}")
        etype = str(r["entity_type"])
        if etype not in ENTITY_TYPES:
            raise ManifestError(f"region {rid}: unknown entity type {etype!r}")
        bbox = _normalize_bbox(r["bbox"], by_id[pid])
        if bbox is None:
            dropped += 1
            continue
        regions.append(
            Region(
                region_id=rid,
                page_id=pid,
                bbox=bbox,
                entity_type=etype,
                detector_payload=dict(r.get("detector_payload", {})),
            )
        )
    return RegionManifest(
        document_id=str(doc.get("document_id", "doc")),
        pages=tuple(pages),
        regions=tuple(regions),
        dropped_degenerate=dropped,
    )


def load_manifest(path) -> RegionManifest:
    """Load and normalize a JSON region manifest from disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(doc)


def containment_ratio(inner: BoundingBox, outer: BoundingBox) -> float:
    """area(inner ∩ outer) / area(inner), in [0, 1]."""
    ix0 = max(inner.x0, outer.x0)
    iy0 = max(inner.y0, outer.y0)
    ix1 = min(inner.x1, outer.x1)
    iy1 = min(inner.y1, outer.y1)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    return ((ix1 - ix0) * (iy1 - iy0)) / inner.area


def spatial_region_filter(regions, threshold: float = 0.85):
    """Suppress text regions enclosed by image or table boxes on their page.

    Returns (kept, removed). Non-text regions are never removed, so the
    filter is idempotent.
    """
    containers = [r for r in regions if r.entity_type in ("image", "table")]
    kept, removed = [], []
    for r in regions:
        if r.entity_type == "text" and any(
            c.page_id == r.page_id
            and containment_ratio(r.bbox, c.bbox) >= threshold
            for c in containers
        ):
            removed.append(r)
        else:
            kept.append(r)
    return kept, removed


def crop_bounds(bbox: BoundingBox, width: int, height: int):
    """Integer crop window: floor x0/y0, ceil x1/y1, clipped to the page.

    Returns ((x0, y0, x1, y1), clipped_flag). Rounding outward means the
    anchor never loses source pixels.
    """
    x0 = math.floor(bbox.x0)
    y0 = math.floor(bbox.y0)
    x1 = math.ceil(bbox.x1)
    y1 = math.ceil(bbox.y1)
    clipped = x0 < 0 or y0 < 0 or x1 > width or y1 > height
    return (max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)), clipped


def anchor_crops(manifest: RegionManifest):
    """Take one immutable crop per region from the unprocessed page raster.

    Returns {region_id: AnchorCrop}, ordered by region_id for determinism.
    """
    rasters = {p.page_id: p.load_raster() for p in manifest.pages}
    out = {}
    for region in sorted(manifest.regions, key=lambda r: r.region_id):
        raster = rasters[region.page_id]
        h, w = raster.shape[:2]
        (x0, y0, x1, y1), _clipped = crop_bounds(region.bbox, w, h)
        pixels = np.ascontiguousarray(raster[y0:y1, x0:x1])
        out[region.region_id] = AnchorCrop(
            pixels=pixels, source_page=region.page_id, bbox=region.bbox
        )
    return out


def estimate_skew(raster: np.ndarray, step: float = 0.5, max_angle: float = 45.0) -> float:
    """Dominant-line angle in degrees via a coarse Hough accumulator.

    Binarizes with Otsu, then for each candidate angle histograms the
    line-normal coordinate of ink pixels and scores the angle by its peak
    bin; the modal angle wins. Positive angle = content rotated
    counter-clockwise relative to horizontal.
    """
    from .metrics import binarize, to_gray

    gray = to_gray(raster)
    if float(gray.max()) == float(gray.min()):
        return 0.0  # no structure at all
    ink = binarize(gray) == 0  # dark pixels are ink on document pages
    ys, xs = np.nonzero(ink)
    if ys.size < 16:
        return 0.0
    if ys.size > 20000:
        sel = np.linspace(0, ys.size - 1, 20000).astype(int)
        ys, xs = ys[sel], xs[sel]
    ys = ys.astype(np.float64)
    xs = xs.astype(np.float64)
    angles = np.arange(-max_angle, max_angle + step / 2, step)
    best_angle, best_peak = 0.0, -1
    for ang in angles:
        rad = math.radians(ang)
        rho = ys * math.cos(rad) - xs * math.sin(rad)
        hist, _ = np.histogram(rho, bins=max(8, int((rho.max() - rho.min()) / 2.0) + 1))
        peak = int(hist.max())
        if peak > best_peak:
            best_peak, best_angle = peak, float(ang)
    # sign flipped so the result matches the rotation that produced the
    # skew (counter-clockwise positive, PIL convention)
    return -best_angle


def classify_page_quality(raster: np.ndarray, has_embedded_text: bool = False) -> QualityClass:
    """Skew-based heuristic: |skew| <= 1 degree is clean (with embedded
    text) or scanned_clean (without); anything steeper is scanned_degraded.

    The photographed/handwritten/overlapping classes are accepted from
    external classifiers in manifests but never emitted here.
    """
    skew = estimate_skew(raster)
    if abs(skew) <= 1.0:
        label = "clean" if has_embedded_text else "scanned_clean"
    else:
        label = "scanned_degraded"
    return QualityClass(label=label, skew_degrees=skew)


def deskew(raster: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate by -angle about the center, bilinear resampling, white fill.

    Anchor crops are never taken from the deskewed raster; this feeds the
    pre-processing track only.
    """
    if not -45.0 <= angle_degrees <= 45.0:
        raise ValueError("deskew angle outside [-45, 45]")
    if angle_degrees == 0.0:
        return np.array(raster, copy=True)
    im = Image.fromarray(np.asarray(raster).astype(np.uint8), mode="L")
    # content skewed by +a is corrected by rotating -a (PIL positive =
    # counter-clockwise)
    out = im.rotate(-angle_degrees, resample=Image.Resampling.BILINEAR, fillcolor=255)
    return np.asarray(out)
