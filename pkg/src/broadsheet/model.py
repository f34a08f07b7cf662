"""Core domain types for page layout hypotheses and region transcripts.

Conventions fixed here and relied on everywhere else:

* Boxes are corner-form ``(x1, y1, x2, y2)`` in pixels, top-left origin,
  ``x1 < x2`` and ``y1 < y2``.  Detection files on disk use the normalized
  center form (``class cx cy w h [confidence]``) and are converted on ingest.
* Grayscale images are plain numpy ``uint8`` arrays of shape
  ``(height, width)``; there is no wrapper class.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import ConfigError, DegenerateBox

log = logging.getLogger(__name__)

# Decimal places used when writing normalized detection files.  At 6 places
# the corner round-trip error is far below the 0.5 px interchange tolerance.
_COORD_DECIMALS = 6


class RegionLabel(Enum):
    """Closed set of layout region classes."""

    ARTICLE = "article"
    HEADLINE = "headline"
    SUBHEADING = "subheading"
    ADVERTISEMENT = "advertisement"

    @classmethod
    def parse(cls, text: str) -> "RegionLabel":
        """Parse a canonical label string; anything else is a ValueError."""
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown region label: {text!r}")

    @classmethod
    def from_class_index(cls, index: int) -> "RegionLabel":
        labels = list(cls)
        if not 0 <= index < len(labels):
            raise ValueError(f"class index out of range: {index}")
        return labels[index]

    @property
    def class_index(self) -> int:
        return list(type(self)).index(self)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, corner form, pixel coordinates.

    Valid boxes have finite non-negative coordinates and strictly positive
    area.  Construction does not enforce this; see
    :func:`validate_detection_set`, which reports violations as data.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def is_valid(self) -> bool:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            return False
        if min(coords) < 0:
            return False
        return self.x1 < self.x2 and self.y1 < self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    """One layout hypothesis: a box, its class, and the detector's score."""

    bbox: BBox
    label: RegionLabel
    confidence: float
    source_model: str


@dataclass(frozen=True)
class DetectionSet:
    """All detections of one model (or of the fusion stage) for one page."""

    page_id: str
    image_width: int
    image_height: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        # Normalize any list input so instances hash and compare by value.
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class RegionTranscript:
    """OCR output for one region; mirrors the on-disk record exactly."""

    bbox: BBox
    label: RegionLabel
    ocr_text: str
    confidence: float


@dataclass(frozen=True)
class PageTranscript:
    """Ordered region transcripts for one page produced by one pipeline."""

    page_id: str
    pipeline_id: str
    regions: tuple[RegionTranscript, ...]

    def __post_init__(self):
        if not isinstance(self.regions, tuple):
            object.__setattr__(self, "regions", tuple(self.regions))


# ---------------------------------------------------------------------------
# Validation and geometry helpers
# ---------------------------------------------------------------------------

def validate_detection_set(ds: DetectionSet) -> list[str]:
    """Check every type invariant; return one message per violation.

    An empty list means the set is valid.  Violations are data, not
    failures: callers decide whether to raise.
    """
    violations: list[str] = []
    if ds.image_width <= 0 or ds.image_height <= 0:
        violations.append(
            f"page dimensions must be positive, got "
            f"{ds.image_width}x{ds.image_height}"
        )
    for i, det in enumerate(ds.detections):
        b = det.bbox
        coords = b.as_tuple()
        if not all(math.isfinite(c) for c in coords):
            violations.append(f"detection {i}: non-finite coordinate in {coords}")
            continue
        if min(coords) < 0:
            violations.append(f"detection {i}: negative coordinate in {coords}")
        if b.x1 >= b.x2 or b.y1 >= b.y2:
            violations.append(f"detection {i}: degenerate box {coords}")
        if b.x2 > ds.image_width or b.y2 > ds.image_height:
            violations.append(
                f"detection {i}: box {coords} exceeds page "
                f"{ds.image_width}x{ds.image_height}"
            )
        if not 0.0 <= det.confidence <= 1.0:
            violations.append(
                f"detection {i}: confidence {det.confidence} outside [0, 1]"
            )
    return violations


def clamp_to_page(b: BBox, width: float, height: float) -> BBox:
    """Clip a box to ``[0, width] x [0, height]``.

    Raises:
        DegenerateBox: if the clipped box has zero area (the box lies
            entirely outside the page).
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"page dimensions must be positive, got {width}x{height}")
    x1 = min(max(b.x1, 0.0), width)
    x2 = min(max(b.x2, 0.0), width)
    y1 = min(max(b.y1, 0.0), height)
    y2 = min(max(b.y2, 0.0), height)
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBox(f"box {b.as_tuple()} is empty after clamping to {width}x{height}")
    return BBox(x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# Detection file format (normalized center form, one region per line)
# ---------------------------------------------------------------------------

def read_label_lines(path: str | Path) -> list[tuple[int, float, float, float, float, float | None]]:
    """Parse a detection/label file into raw normalized tuples.

    Each line is ``class_index cx cy w h [confidence]`` with geometry in
    [0, 1].  Returns ``(class_index, cx, cy, w, h, confidence_or_None)``
    per line; blank lines are skipped.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read detection file {path}: {exc}") from exc
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (5, 6):
            raise ConfigError(f"{path}:{lineno}: expected 5 or 6 fields, got {len(parts)}")
        try:
            cls = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:5])
            conf = float(parts[5]) if len(parts) == 6 else None
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        rows.append((cls, cx, cy, w, h, conf))
    return rows


def parse_detection_file(
    path: str | Path,
    page_id: str,
    image_width: int,
    image_height: int,
    source_model: str,
) -> DetectionSet:
    """Load one model's detections for one page.

    Normalized center boxes are converted to corner pixels, clamped to the
    page, and fully out-of-page boxes are dropped with a warning.  A missing
    confidence column defaults to 1.0 (ground-truth style files).
    """
    detections = []
    for i, (cls, cx, cy, w, h, conf) in enumerate(read_label_lines(path)):
        try:
            label = RegionLabel.from_class_index(cls)
        except ValueError as exc:
            raise ConfigError(f"{path}: region {i}: {exc}") from exc
        box = BBox(
            (cx - w / 2.0) * image_width,
            (cy - h / 2.0) * image_height,
            (cx + w / 2.0) * image_width,
            (cy + h / 2.0) * image_height,
        )
        try:
            box = clamp_to_page(box, image_width, image_height)
        except DegenerateBox:
            log.warning("%s: dropping region %d (outside page bounds)", path, i)
            continue
        confidence = 1.0 if conf is None else min(max(conf, 0.0), 1.0)
        detections.append(Detection(box, label, confidence, source_model))
    return DetectionSet(page_id, image_width, image_height, tuple(detections))


def format_detection_line(det: Detection, image_width: int, image_height: int,
                          include_confidence: bool = True) -> str:
    """Render one detection as a normalized center-form text line."""
    b = det.bbox
    cx = (b.x1 + b.x2) / 2.0 / image_width
    cy = (b.y1 + b.y2) / 2.0 / image_height
    w = b.width / image_width
    h = b.height / image_height
    fields = [str(det.label.class_index)] + [
        f"{v:.{_COORD_DECIMALS}f}" for v in (cx, cy, w, h)
    ]
    if include_confidence:
        fields.append(f"{det.confidence:.{_COORD_DECIMALS}f}")
    return " ".join(fields)


def write_detection_file(ds: DetectionSet, path: str | Path,
                         include_confidence: bool = True) -> None:
    """Write a detection set in the normalized text interchange form.

    The normalized encoding quantizes coordinates; a read-back is within
    0.5 px of the source, not bit-identical.  Use the JSON form for exact
    round-trips.
    """
    lines = [
        format_detection_line(d, ds.image_width, ds.image_height, include_confidence)
        for d in ds.detections
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# JSON (de)serialization: exact round-trips
# ---------------------------------------------------------------------------

def detection_set_to_json(ds: DetectionSet) -> str:
    payload = {
        "page_id": ds.page_id,
        "image_width": ds.image_width,
        "image_height": ds.image_height,
        "detections": [
            {
                "bbox": list(d.bbox.as_tuple()),
                "label": d.label.value,
                "confidence": d.confidence,
                "source_model": d.source_model,
            }
            for d in ds.detections
        ],
    }
    return json.dumps(payload, indent=2)


def detection_set_from_json(text: str) -> DetectionSet:
    payload = json.loads(text)
    detections = tuple(
        Detection(
            BBox(*(float(v) for v in d["bbox"])),
            RegionLabel.parse(d["label"]),
            float(d["confidence"]),
            d["source_model"],
        )
        for d in payload["detections"]
    )
    return DetectionSet(
        payload["page_id"],
        int(payload["image_width"]),
        int(payload["image_height"]),
        detections,
    )


def region_record(region: RegionTranscript) -> dict:
    """The four-key transcript record written per region."""
    return {
        "bbox": list(region.bbox.as_tuple()),
        "label": region.label.value,
        "ocr_text": region.ocr_text,
        "confidence": region.confidence,
    }


def page_transcript_to_json(page: PageTranscript) -> str:
    payload = {
        "page_id": page.page_id,
        "pipeline_id": page.pipeline_id,
        "regions": [region_record(r) for r in page.regions],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False)


def page_transcript_from_json(text: str) -> PageTranscript:
    payload = json.loads(text)
    regions = tuple(
        RegionTranscript(
            BBox(*(float(v) for v in r["bbox"])),
            RegionLabel.parse(r["label"]),
            r["ocr_text"],
            float(r["confidence"]),
        )
        for r in payload["regions"]
    )
    return PageTranscript(payload["page_id"], payload["pipeline_id"], regions)


def load_page_transcript(path: str | Path) -> PageTranscript:
    return page_transcript_from_json(Path(path).read_text(encoding="utf-8"))


def save_page_transcript(page: PageTranscript, path: str | Path) -> None:
    Path(path).write_text(page_transcript_to_json(page), encoding="utf-8")


def with_pipeline_id(page: PageTranscript, pipeline_id: str) -> PageTranscript:
    return replace(page, pipeline_id=pipeline_id)
