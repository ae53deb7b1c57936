"""Reconstruction-as-validation toolkit for document extraction.

Extracted entities (tables, figures, text blocks) are rendered back into
comparable form and scored against immutable crops of the source page;
low-fidelity extractions get one bounded fallback pass, and every region
ships with a provenance trace. Extractors are external plugins behind a
small wire protocol, so the whole loop runs offline with deterministic
mocks.
"""

from .compare import image_fidelity, row_col_match, table_fidelity, text_fidelity
from .ingest import (
    ManifestError,
    PageDescriptor,
    Region,
    RegionManifest,
    TextSpan,
    anchor_crops,
    classify_page_quality,
    containment_ratio,
    crop_bounds,
    deskew,
    estimate_skew,
    load_manifest,
    parse_manifest,
    spatial_region_filter,
)
from .metrics import (
    UndefinedCorrelationError,
    anls,
    binarize,
    cer,
    hamming64,
    laplacian_variance,
    levenshtein,
    normalize_text,
    otsu_threshold,
    pearson_r,
    phash64,
    phash_similarity,
    spearman_rho,
    ssim,
    ssim_binarized,
)
from .model import (
    AnchorCrop,
    BoundingBox,
    EntityRecord,
    FidelityReport,
    ImageEnrichment,
    ImageEntity,
    ModelError,
    PassResult,
    PluginCall,
    Provenance,
    QualityClass,
    RavConfig,
    RegionContext,
    TableEntity,
    TextEntity,
    ValidationTrace,
    canonical_json,
    raster_sha256,
    trace_roundtrip,
    validate_record,
)
from .orchestrate import (
    ABLATION_MODES,
    AblationError,
    PluginSet,
    derive_ablation_context,
    enrich_context,
    enrich_image,
    gate,
    process_document,
    resolve_plugins,
    validate_entity,
)
from .plugins import (
    CorruptionSpec,
    HttpHandle,
    InProcessHandle,
    PluginProtocolError,
    PluginRequest,
    PluginResponse,
    SubprocessHandle,
    call_plugin,
    decode_crop,
    encode_crop,
    mock_extract_table,
    mock_fallback,
    scripted_extractor,
)
from .reconstruct import (
    DegenerateTableError,
    ReferenceUnavailableError,
    caption_adjacent,
    reconstruct_image_features,
    reconstruct_table,
    reconstruct_text_reference,
    render_table_grid,
    structural_signature,
)
from .evalkit import (
    EvalInputError,
    ablation_report,
    fidelity_reliability,
    iou,
    layout_eval,
    recovery_rate,
    table_structure_eval,
)
from .walkthrough import (
    EXPECTED_OUTCOMES,
    ExpectedOutcome,
    WalkthroughError,
    build_walkthrough,
    replay_walkthrough,
    run_walkthrough,
)

__version__ = "0.1.0"
