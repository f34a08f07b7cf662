"""Layout fusion, OCR orchestration, and unsupervised transcript scoring.

The package turns multi-model layout detections for scanned newspaper
pages into fused region sets, drives a pluggable recognition engine over
those regions, and scores the resulting transcripts without ground truth
(vocabulary coverage, n-gram entropy, duplicate-text rate).  It also ships
a synthetic page generator for controlled experiments and standard
detection quality scoring.
"""

from .deteval import (
    COCO_THRESHOLDS,
    DetEvalConfig,
    MapResult,
    average_precision,
    map_score,
    match_detections,
)
from .errors import (
    BroadsheetError,
    ConfigError,
    DegenerateBox,
    EmptyCorpus,
    EngineError,
    ImageTooSmall,
    InsufficientSamples,
    PageMismatch,
)
from .fusion import (
    FusedBox,
    FusionConfig,
    fuse_boxes,
    fuse_detections,
    fuse_group,
    group_boxes,
    iou,
    suppress_near_duplicates,
)
from .imageproc import (
    PreprocessConfig,
    adaptive_mean_threshold,
    clahe,
    median_denoise,
    preprocess,
)
from .metrics import (
    MetricsRecord,
    NgramConfig,
    NgramDistribution,
    PipelineSummary,
    Vocabulary,
    aggregate,
    evaluate_page,
    load_vocabulary,
    ngram_distribution,
    normalize_text,
    red,
    scs,
    tokenize,
    trs,
)
from .model import (
    BBox,
    Detection,
    DetectionSet,
    PageTranscript,
    RegionLabel,
    RegionTranscript,
    clamp_to_page,
    detection_set_from_json,
    detection_set_to_json,
    load_page_transcript,
    page_transcript_from_json,
    page_transcript_to_json,
    parse_detection_file,
    region_record,
    save_page_transcript,
    validate_detection_set,
    write_detection_file,
)
from .ocr import (
    CommandEngine,
    FixedTextEngine,
    OcrEngine,
    RegionProvenance,
    StubEngine,
    WindowConfig,
    dedupe_lines,
    make_engine,
    ocr_region,
    split_windows,
    transcribe_page,
)
from .pipeline import (
    PageEntry,
    RunConfig,
    RunResult,
    ingest_corpus,
    load_run_config,
    run_pipelines,
    write_run_outputs,
)
from .report import emit_report, read_per_page_csv, render_figures
from .synth import (
    AugmentConfig,
    GeometrySample,
    KdeModel,
    LayoutConfig,
    SyntheticPage,
    augment_element,
    check_page,
    default_geometry_samples,
    fit_kde,
    fit_models,
    generate_corpus,
    generate_layout,
    kde_density,
    label_content,
    rasterize,
    sample_kde,
    samples_from_label_dir,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
