"""End-to-end corpus runs: ingest, transcribe, score, and write outputs.

A run config names a corpus directory, a set of pipelines, and a
vocabulary.  Two pipeline names are reserved: ``fullpage`` (whole page as
one region) and ``fusion`` (merge the configured source models' boxes);
every other name is a detection model whose box files live under
``detections/<name>/``.  Results are deterministic for a fixed config
regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import BroadsheetError, ConfigError, EmptyCorpus
from .fusion import FusionConfig, fuse_detections
from .imageproc import PreprocessConfig
from .metrics import MetricsRecord, NgramConfig, evaluate_page, load_vocabulary
from .model import (
    DetectionSet,
    PageTranscript,
    parse_detection_file,
    save_page_transcript,
)
from .ocr import WindowConfig, make_engine, transcribe_page
from .report import emit_report
from .synth import AugmentConfig

log = logging.getLogger(__name__)

RESERVED_PIPELINES = ("fullpage", "fusion")


@dataclass(frozen=True)
class RunConfig:
    """Everything a corpus run needs, loadable from JSON.

    ``seed`` and ``augment`` are recorded with the run for tooling that
    derives work from it (corpus regeneration, element augmentation); the
    transcription pipelines themselves are deterministic and ignore both.
    """

    corpus: Path
    out: Path
    vocabulary: Path
    pipelines: tuple[str, ...] = ("fullpage", "fusion")
    fusion_sources: tuple[str, ...] = ()
    engine: str = "stub"
    workers: int = 1
    seed: int = 0
    figures: bool = True
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ngram: NgramConfig = field(default_factory=NgramConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not self.pipelines:
            raise ConfigError("at least one pipeline is required")
        if len(set(self.pipelines)) != len(self.pipelines):
            raise ConfigError(f"duplicate pipeline names: {self.pipelines}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def source_models(self) -> tuple[str, ...]:
        """Model-backed pipelines plus any extra fusion sources."""
        named = [p for p in self.pipelines if p not in RESERVED_PIPELINES]
        for extra in self.effective_fusion_sources():
            if extra not in named:
                named.append(extra)
        return tuple(named)

    def effective_fusion_sources(self) -> tuple[str, ...]:
        if "fusion" not in self.pipelines:
            return ()
        if self.fusion_sources:
            return self.fusion_sources
        inferred = tuple(p for p in self.pipelines if p not in RESERVED_PIPELINES)
        if not inferred:
            raise ConfigError(
                "the fusion pipeline needs fusion_sources or at least one "
                "model-backed pipeline to draw boxes from"
            )
        return inferred


_NESTED_CONFIGS = {
    "fusion": FusionConfig,
    "ngram": NgramConfig,
    "window": WindowConfig,
    "preprocess": PreprocessConfig,
    "augment": AugmentConfig,
}
_PATH_KEYS = ("corpus", "out", "vocabulary")


def load_run_config(path: str | Path, **overrides) -> RunConfig:
    """Parse a JSON run config; keyword overrides win over file values.

    Relative paths in the file resolve against the file's directory.
    """
    cfg_path = Path(path)
    try:
        raw = json.loads(cfg_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"run config must be a JSON object, got {type(raw).__name__}")

    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")

    kwargs: dict = {}
    for key, value in raw.items():
        if key in _NESTED_CONFIGS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a JSON object")
            try:
                kwargs[key] = _NESTED_CONFIGS[key](**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad {key} config: {exc}") from exc
        elif key in _PATH_KEYS:
            p = Path(value)
            kwargs[key] = p if p.is_absolute() else cfg_path.parent / p
        elif key in ("pipelines", "fusion_sources"):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value

    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value

    for required in ("corpus", "out", "vocabulary"):
        if required not in kwargs:
            raise ConfigError(f"run config is missing required key '{required}'")
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad run config: {exc}") from exc


@dataclass(frozen=True)
class PageEntry:
    """One corpus page: its image plus whatever label files exist for it."""

    page_id: str
    image_path: Path
    detections: dict[str, Path]
    ground_truth: Path | None = None


def ingest_corpus(root: str | Path, models: tuple[str, ...] = ()) -> list[PageEntry]:
    """Scan a corpus directory into page entries, ordered by page id.

    Expected layout: ``pages/<id>.png``, ``detections/<model>/<id>.txt``,
    optional ``gt/<id>.txt``.  Missing detection files are recorded as
    absent here and reported when a pipeline actually needs them.
    """
    base = Path(root)
    pages_dir = base / "pages"
    images = sorted(pages_dir.glob("*.png")) if pages_dir.is_dir() else []
    if not images:
        raise EmptyCorpus(f"no page images under {pages_dir}")

    if not models:
        det_root = base / "detections"
        if det_root.is_dir():
            models = tuple(sorted(d.name for d in det_root.iterdir() if d.is_dir()))

    entries = []
    for image in images:
        page_id = image.stem
        det_files = {}
        for model in models:
            candidate = base / "detections" / model / f"{page_id}.txt"
            if candidate.is_file():
                det_files[model] = candidate
        gt = base / "gt" / f"{page_id}.txt"
        entries.append(PageEntry(page_id, image, det_files, gt if gt.is_file() else None))
    return entries


@dataclass
class RunResult:
    records: list[MetricsRecord]
    transcripts: list[PageTranscript]
    errors: list[tuple[str, str, str]]  # (page_id, pipeline, message)
    skips: list[tuple[str, str, str]]  # (page_id, pipeline, reason)


def _load_page_image(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def _parse_available(entry: PageEntry, needed: tuple[str, ...],
                     width: int, height: int) -> tuple[dict[str, DetectionSet], dict[str, str]]:
    """Parse each model's detection file; unreadable files become failures.

    Returns (parsed sets, failure message per broken model) so that only
    the pipelines depending on a broken file are marked failed.
    """
    parsed: dict[str, DetectionSet] = {}
    failed: dict[str, str] = {}
    for model in needed:
        path = entry.detections.get(model)
        if path is None:
            continue
        try:
            parsed[model] = parse_detection_file(path, entry.page_id, width, height, model)
        except (BroadsheetError, OSError) as exc:
            log.warning("page %s: model %s: %s", entry.page_id, model, exc)
            failed[model] = str(exc)
    return parsed, failed


def _process_page(entry: PageEntry, cfg: RunConfig, engine, vocab):
    """Transcribe and score one page under every pipeline.

    Returns (records, transcripts, errors, skips) for this page only, so
    results can be concatenated in page order regardless of scheduling.
    """
    records: list[MetricsRecord] = []
    transcripts: list[PageTranscript] = []
    errors: list[tuple[str, str, str]] = []
    skips: list[tuple[str, str, str]] = []

    # One bad page must never abort the corpus: an unreadable image fails
    # every pipeline on this page, a broken detection file fails only the
    # pipelines that depend on it, and the remaining pages keep running.
    try:
        image = _load_page_image(entry.image_path)
        height, width = image.shape
    except (BroadsheetError, OSError) as exc:
        log.warning("page %s: unusable image: %s", entry.page_id, exc)
        for pipeline in cfg.pipelines:
            errors.append((entry.page_id, pipeline, str(exc)))
        return records, transcripts, errors, skips
    parsed, failed = _parse_available(entry, cfg.source_models(), width, height)
    fusion_sources = cfg.effective_fusion_sources()

    for pipeline in cfg.pipelines:
        detections: DetectionSet | None = None
        if pipeline == "fullpage":
            pass
        elif pipeline == "fusion":
            broken = [m for m in fusion_sources if m in failed]
            if broken:
                errors.append((
                    entry.page_id, pipeline,
                    f"fusion sources unreadable: {broken}: {failed[broken[0]]}",
                ))
                continue
            missing = [m for m in fusion_sources if m not in parsed]
            if missing:
                reason = f"missing detection files for fusion sources: {missing}"
                log.warning("page %s: %s", entry.page_id, reason)
                skips.append((entry.page_id, pipeline, reason))
                continue
            try:
                detections = fuse_detections(
                    {m: parsed[m] for m in fusion_sources}, cfg.fusion
                )
            except BroadsheetError as exc:
                errors.append((entry.page_id, pipeline, str(exc)))
                continue
        else:
            if pipeline in failed:
                errors.append((entry.page_id, pipeline, failed[pipeline]))
                continue
            if pipeline not in parsed:
                reason = "missing detection file"
                log.warning("page %s: pipeline %s: %s", entry.page_id, pipeline, reason)
                skips.append((entry.page_id, pipeline, reason))
                continue
            detections = parsed[pipeline]

        try:
            transcript = transcribe_page(
                image,
                detections,
                engine,
                window_cfg=cfg.window,
                preprocess_cfg=cfg.preprocess,
                mode="fullpage" if pipeline == "fullpage" else "layout",
                pipeline_id=pipeline,
                page_id=entry.page_id,
            )
        except BroadsheetError as exc:
            errors.append((entry.page_id, pipeline, str(exc)))
            continue
        records.append(evaluate_page(transcript, vocab, cfg.ngram))
        transcripts.append(transcript)

    return records, transcripts, errors, skips


def run_pipelines(cfg: RunConfig) -> RunResult:
    """Execute every configured pipeline over the corpus.

    Pages run in parallel when cfg.workers > 1; outputs are collected in
    page order, so the result is identical for any worker count.
    """
    entries = ingest_corpus(cfg.corpus, cfg.source_models())
    vocab = load_vocabulary(cfg.vocabulary)
    engine = make_engine(cfg.engine)

    if cfg.workers == 1:
        per_page = [_process_page(e, cfg, engine, vocab) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_process_page, e, cfg, engine, vocab) for e in entries]
            per_page = [f.result() for f in futures]

    result = RunResult([], [], [], [])
    for records, transcripts, errors, skips in per_page:
        result.records.extend(records)
        result.transcripts.extend(transcripts)
        result.errors.extend(errors)
        result.skips.extend(skips)
    if not result.records:
        raise EmptyCorpus(
            "no page produced any metrics record; see errors: "
            + "; ".join(f"{p}/{pl}: {msg}" for p, pl, msg in result.errors[:5])
        )
    return result


def write_run_outputs(result: RunResult, cfg: RunConfig) -> dict[str, object]:
    """Write the full output bundle for a run under cfg.out.

    Bundle: report CSVs and figures, per-pipeline transcript JSON files,
    and errors.csv (always present, possibly header-only).
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    emitted = emit_report(result.records, out, figures=cfg.figures)

    for transcript in result.transcripts:
        tdir = out / "transcripts" / transcript.pipeline_id
        tdir.mkdir(parents=True, exist_ok=True)
        save_page_transcript(transcript, tdir / f"{transcript.page_id}.json")

    errors_path = out / "errors.csv"
    with open(errors_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["page_id", "pipeline", "kind", "message"])
        for page_id, pipeline, message in sorted(result.errors):
            writer.writerow([page_id, pipeline, "error", message])
        for page_id, pipeline, reason in sorted(result.skips):
            writer.writerow([page_id, pipeline, "skip", reason])
    emitted["errors"] = errors_path
    return emitted


def exit_code_for(result: RunResult) -> int:
    """0 for a clean run, 2 when partial failures were recorded."""
    return 2 if result.errors else 0
