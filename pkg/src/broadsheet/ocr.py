"""Region OCR orchestration over a pluggable engine.

An engine is anything with ``recognize(image) -> (text, confidence)`` that
is deterministic for identical pixels.  Two engines ship here: a content
hash driven stub used by the test suite and the batch harness when no real
recognizer is installed, and a wrapper that shells out to an external
command.  Tall regions are transcribed as overlapping horizontal strips
whose repeated lines are filtered before concatenation.
"""

from __future__ import annotations

import hashlib
import logging
import math
import shlex
import subprocess
import tempfile
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ConfigError, EngineError, ImageTooSmall
from .imageproc import PreprocessConfig, preprocess
from .metrics import normalize_text
from .model import (
    BBox,
    Detection,
    DetectionSet,
    PageTranscript,
    RegionLabel,
    RegionTranscript,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-strip geometry for tall regions."""

    strip_height: int = 300
    overlap_fraction: float = 0.25
    tall_region_threshold: int = 400

    def __post_init__(self):
        if self.strip_height <= 0:
            raise ValueError(f"strip_height must be positive, got {self.strip_height}")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError(f"overlap_fraction must be in [0, 1), got {self.overlap_fraction}")


class OcrEngine(Protocol):
    """Contract for text recognizers: image in, (text, confidence) out."""

    def recognize(self, image: np.ndarray) -> tuple[str, float]: ...


# Embedded word list the stub engine draws from.  Chosen to overlap with
# common English vocabularies so coherence scores land strictly inside (0, 1)
# on stub output whenever the reference list covers only part of it.
_STUB_WORDS = (
    "the of and to in that for was with his they from this have not press "
    "city county state street morning evening public notice meeting church "
    "school friends people years letter editor paper office price terms "
    "agents news weekly journal liberty freedom star north man men time day "
    "qzxv wkjy vvqk zzyx"
).split()


class StubEngine:
    """Deterministic in-process recognizer for tests and dry runs.

    Text lines are derived from the pixel content: each horizontal band of
    dark pixels becomes one line whose words are picked from an embedded
    list by hashing the band's pixels.  Identical pixels always produce
    identical text, so near-duplicate crops transcribe identically and
    overlapping strips repeat their shared lines, like a real engine.
    """

    dark_threshold = 128
    min_dark_fraction = 0.05

    def recognize(self, image: np.ndarray) -> tuple[str, float]:
        if image.ndim != 2:
            raise ValueError("stub engine expects a 2-D grayscale array")
        lines = []
        confidences = []
        for y0, y1 in self._bands(image):
            digest = hashlib.sha256(
                image[y0:y1].tobytes() + (y1 - y0).to_bytes(4, "big")
            ).digest()
            count = 3 + digest[0] % 6
            words = [_STUB_WORDS[digest[1 + k] % len(_STUB_WORDS)] for k in range(count)]
            lines.append(" ".join(words))
            confidences.append(0.60 + (digest[-1] % 40) / 100.0)
        if not lines:
            return "", 1.0
        return "\n".join(lines), sum(confidences) / len(confidences)

    def _bands(self, image: np.ndarray) -> list[tuple[int, int]]:
        dark = (image < self.dark_threshold).mean(axis=1) > self.min_dark_fraction
        bands = []
        start = None
        for y, flag in enumerate(dark):
            if flag and start is None:
                start = y
            elif not flag and start is not None:
                bands.append((start, y))
                start = None
        if start is not None:
            bands.append((start, len(dark)))
        return bands


class FixedTextEngine:
    """Returns the same text for every image; unit-test helper."""

    def __init__(self, text: str, confidence: float = 1.0):
        self.text = text
        self.confidence = confidence

    def recognize(self, image: np.ndarray) -> tuple[str, float]:
        return self.text, self.confidence


class CommandEngine:
    """Run an external recognizer command per image.

    The command template is split with shell quoting rules and every
    ``{image}`` placeholder is replaced by the path of a temporary PNG.
    The recognized text is the command's stdout.  A line on stderr that
    parses as a float in [0, 1] is taken as the engine confidence
    (default 1.0).  A nonzero exit status raises EngineError.
    """

    def __init__(self, command_template: str, timeout: float = 120.0):
        self.argv_template = shlex.split(command_template)
        if not any("{image}" in part for part in self.argv_template):
            raise ConfigError("command template must contain an {image} placeholder")
        self.timeout = timeout

    def recognize(self, image: np.ndarray) -> tuple[str, float]:
        from PIL import Image

        with tempfile.NamedTemporaryFile(suffix=".png", delete=True) as tmp:
            Image.fromarray(image, mode="L").save(tmp.name)
            argv = [part.replace("{image}", tmp.name) for part in self.argv_template]
            try:
                proc = subprocess.run(
                    argv, capture_output=True, timeout=self.timeout, check=False
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise EngineError(f"engine command failed to run: {exc}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode("utf-8", "replace").strip()
            raise EngineError(
                f"engine exited with status {proc.returncode}: {stderr[:200]}"
            )
        text = proc.stdout.decode("utf-8", "replace")
        confidence = 1.0
        for line in proc.stderr.decode("utf-8", "replace").splitlines():
            try:
                value = float(line.strip())
            except ValueError:
                continue
            if 0.0 <= value <= 1.0:
                confidence = value
                break
        return text, confidence


def make_engine(spec: str) -> OcrEngine:
    """Build an engine from a CLI spec: ``stub`` or a command template."""
    if spec == "stub":
        return StubEngine()
    return CommandEngine(spec)


# ---------------------------------------------------------------------------
# Strip windowing and duplicate-line filtering
# ---------------------------------------------------------------------------

def split_windows(region_height: int, cfg: WindowConfig | None = None) -> list[tuple[int, int]]:
    """Strip intervals (y_start, y_end) covering [0, region_height].

    Regions at or below the tall-region threshold get a single window.
    Taller regions get fixed-height strips advancing by
    ``strip_height * (1 - overlap_fraction)``, with the final strip pinned
    to the bottom edge.
    """
    cfg = cfg or WindowConfig()
    if region_height <= 0:
        raise ValueError(f"region height must be positive, got {region_height}")
    if region_height <= cfg.tall_region_threshold:
        return [(0, region_height)]
    stride = cfg.strip_height * (1.0 - cfg.overlap_fraction)
    windows = []
    start = 0.0
    while start + cfg.strip_height < region_height:
        windows.append((int(round(start)), int(round(start)) + cfg.strip_height))
        start += stride
    windows.append((max(region_height - cfg.strip_height, 0), region_height))
    return windows


DEDUPE_LOOKBACK = 5


def dedupe_lines(per_window_texts: list[list[str]]) -> list[str]:
    """Concatenate window line lists, dropping short-range repeats.

    A line is dropped when its normalized form equals one of the last
    5 emitted lines' normalized forms; this removes the duplicate lines
    that overlapping strips produce without suppressing repeats that are
    far apart on the page.
    """
    recent: deque[str] = deque(maxlen=DEDUPE_LOOKBACK)
    out = []
    for window in per_window_texts:
        for line in window:
            key = normalize_text(line)
            if key in recent:
                continue
            out.append(line)
            recent.append(key)
    return out


# ---------------------------------------------------------------------------
# Region and page transcription
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionProvenance:
    """Engine-side metadata for one transcribed region."""

    window_count: int
    engine_confidences: tuple[float, ...] = field(default_factory=tuple)

    @property
    def engine_confidence(self) -> float:
        if not self.engine_confidences:
            return 1.0
        return sum(self.engine_confidences) / len(self.engine_confidences)


def _crop(image: np.ndarray, bbox: BBox) -> np.ndarray:
    h, w = image.shape
    x1 = max(int(math.floor(bbox.x1)), 0)
    y1 = max(int(math.floor(bbox.y1)), 0)
    x2 = min(int(math.ceil(bbox.x2)), w)
    y2 = min(int(math.ceil(bbox.y2)), h)
    return image[y1:y2, x1:x2]


def _fitted_preprocess(crop: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Preprocess a crop, shrinking the threshold window for small regions.

    ``preprocess`` itself rejects images below the configured window; here a
    crop smaller than the window gets the largest odd window that fits, and
    crops under 3 px in either dimension are passed through unprocessed.
    """
    h, w = crop.shape
    window = min(cfg.adaptive_window, h, w)
    if window % 2 == 0:
        window -= 1
    if window < 3:
        return crop
    if window == cfg.adaptive_window:
        return preprocess(crop, cfg)
    fitted = PreprocessConfig(
        median_denoise_radius=cfg.median_denoise_radius,
        clahe_clip_limit=cfg.clahe_clip_limit,
        clahe_tile_grid=cfg.clahe_tile_grid,
        adaptive_window=window,
        adaptive_offset=cfg.adaptive_offset,
    )
    return preprocess(crop, fitted)


def ocr_region(
    page_image: np.ndarray,
    det: Detection,
    engine: OcrEngine,
    window_cfg: WindowConfig | None = None,
    preprocess_cfg: PreprocessConfig | None = None,
) -> tuple[RegionTranscript, RegionProvenance]:
    """Transcribe one detected region.

    Crop, preprocess, strip-split, recognize each strip, filter repeated
    lines, and join with newlines.  The transcript carries the detector
    confidence; engine confidences are returned in the provenance record.

    Raises:
        EngineError: engine failure, annotated with the region identity.
    """
    window_cfg = window_cfg or WindowConfig()
    preprocess_cfg = preprocess_cfg or PreprocessConfig()

    crop = _crop(page_image, det.bbox)
    if crop.size == 0:
        raise ImageTooSmall(f"region {det.bbox.as_tuple()} crops to an empty image")
    prepared = _fitted_preprocess(crop, preprocess_cfg)

    texts: list[list[str]] = []
    confidences: list[float] = []
    windows = split_windows(prepared.shape[0], window_cfg)
    for y0, y1 in windows:
        strip = prepared[y0:y1]
        try:
            text, confidence = engine.recognize(strip)
        except EngineError as exc:
            raise EngineError(
                f"region {det.label.value}@{det.bbox.as_tuple()}: {exc}"
            ) from exc
        texts.append(text.splitlines())
        confidences.append(confidence)

    transcript = RegionTranscript(
        bbox=det.bbox,
        label=det.label,
        ocr_text="\n".join(dedupe_lines(texts)),
        confidence=det.confidence,
    )
    return transcript, RegionProvenance(len(windows), tuple(confidences))


def _reading_order(detections: tuple[Detection, ...]) -> list[Detection]:
    return sorted(detections, key=lambda d: (d.bbox.y1, d.bbox.x1))


def transcribe_page(
    page_image: np.ndarray,
    detections: DetectionSet | None,
    engine: OcrEngine,
    window_cfg: WindowConfig | None = None,
    preprocess_cfg: PreprocessConfig | None = None,
    mode: str = "layout",
    pipeline_id: str = "layout",
    page_id: str | None = None,
    workers: int = 1,
    provenance: list[tuple[int, RegionProvenance]] | None = None,
) -> PageTranscript:
    """Transcribe a page region by region (or whole, in fullpage mode).

    Layout mode transcribes each detection in reading order (top to bottom,
    then left to right).  Fullpage mode ignores detections and produces a
    single region covering the page.  Regions are recognized concurrently
    when ``workers`` exceeds 1; output order does not depend on worker
    count.  Per-region engine failures are logged and skipped; the call
    raises only when every region fails.  Pass a list as ``provenance`` to
    collect (reading-order index, RegionProvenance) per transcribed region.
    """
    if mode not in ("layout", "fullpage"):
        raise ValueError(f"mode must be 'layout' or 'fullpage', got {mode!r}")

    if mode == "fullpage":
        h, w = page_image.shape
        if page_id is None:
            page_id = detections.page_id if detections else "page"
        full = Detection(BBox(0.0, 0.0, float(w), float(h)), RegionLabel.ARTICLE, 1.0, pipeline_id)
        transcript, prov = ocr_region(page_image, full, engine, window_cfg, preprocess_cfg)
        if provenance is not None:
            provenance.append((0, prov))
        return PageTranscript(page_id, pipeline_id, (transcript,))

    if detections is None:
        raise ValueError("layout mode requires a detection set")
    page_id = page_id or detections.page_id
    ordered = _reading_order(detections.detections)

    def work(det: Detection):
        return ocr_region(page_image, det, engine, window_cfg, preprocess_cfg)

    results: list[RegionTranscript | None] = []
    failures: list[str] = []
    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(work, det) for det in ordered]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except (EngineError, ImageTooSmall) as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for det in ordered:
            try:
                outcomes.append(work(det))
            except (EngineError, ImageTooSmall) as exc:
                outcomes.append(exc)

    for idx, (det, outcome) in enumerate(zip(ordered, outcomes)):
        if isinstance(outcome, Exception):
            failures.append(f"page {page_id}: {outcome}")
            log.warning("skipping region on page %s: %s", page_id, outcome)
            results.append(None)
        else:
            results.append(outcome[0])
            if provenance is not None:
                provenance.append((idx, outcome[1]))

    regions = tuple(r for r in results if r is not None)
    if ordered and not regions:
        raise EngineError(
            f"all {len(ordered)} regions failed on page {page_id}: {failures[0]}"
        )
    return PageTranscript(page_id, pipeline_id, regions)
