"""Synthetic newspaper pages from density models of annotated box geometry.

A per-label Gaussian kernel density model is fitted over normalized box
features (width, height, center x, center y as page fractions) and sampled
to lay out pages: one centered headline over 2 to 7 equal-width columns
filled with articles, optional subheadings, and advertisements.  Pages are
rasterized as segmented dark text-line stripes with pixel noise and written
with matching pseudo-annotation label files.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InsufficientSamples
from .model import (
    BBox,
    Detection,
    RegionLabel,
    format_detection_line,
    read_label_lines,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = ("width_frac", "height_frac", "x_center_frac", "y_center_frac")
BANDWIDTH_FLOOR = 1e-3


@dataclass(frozen=True)
class GeometrySample:
    """One annotated box reduced to page-relative geometry features."""

    label: RegionLabel
    features: tuple[float, float, float, float]  # (w, h, cx, cy) fractions

    def __post_init__(self):
        if len(self.features) != 4:
            raise ValueError(f"expected 4 features, got {len(self.features)}")
        if not all(0.0 <= f <= 1.0 for f in self.features):
            raise ValueError(f"features must be in [0, 1], got {self.features}")


@dataclass(frozen=True)
class KdeModel:
    """Gaussian kernel density over one label's geometry samples."""

    label: RegionLabel
    samples: tuple[tuple[float, float, float, float], ...]
    bandwidths: tuple[float, float, float, float]


def samples_from_label_dir(path: str | Path) -> list[GeometrySample]:
    """Collect geometry samples from a directory of normalized label files."""
    samples = []
    for file in sorted(Path(path).glob("*.txt")):
        for cls, cx, cy, w, h, _conf in read_label_lines(file):
            label = RegionLabel.from_class_index(cls)
            clip = lambda v: min(max(v, 0.0), 1.0)
            samples.append(GeometrySample(label, (clip(w), clip(h), clip(cx), clip(cy))))
    return samples


def fit_kde(samples: list[GeometrySample], label: RegionLabel) -> KdeModel:
    """Fit a per-dimension Gaussian KDE to the samples of one label.

    Bandwidths follow Scott's rule, std * m**(-1/(d+4)) with d=4 feature
    dimensions, floored at 1e-3 so zero-variance dimensions stay samplable.

    Raises:
        InsufficientSamples: fewer than 2 samples carry the label.
    """
    rows = [s.features for s in samples if s.label is label]
    if len(rows) < 2:
        raise InsufficientSamples(
            f"need >= 2 {label.value} samples to fit a density, got {len(rows)}"
        )
    data = np.asarray(rows, dtype=np.float64)
    m = data.shape[0]
    sigma = data.std(axis=0, ddof=1)
    bandwidths = np.maximum(sigma * m ** (-1.0 / 8.0), BANDWIDTH_FLOOR)
    return KdeModel(label, tuple(map(tuple, data.tolist())), tuple(bandwidths.tolist()))


def sample_kde(model: KdeModel, rng: np.random.Generator) -> tuple[float, float, float, float]:
    """Draw one feature vector: a stored sample plus bandwidth noise, clamped."""
    base = model.samples[int(rng.integers(len(model.samples)))]
    noise = rng.normal(0.0, model.bandwidths)
    return tuple(float(min(max(b + n, 0.0), 1.0)) for b, n in zip(base, noise))


def kde_density(model: KdeModel, point) -> float:
    """Evaluate the model's density at a feature vector."""
    x = np.asarray(point, dtype=np.float64)
    data = np.asarray(model.samples)
    h = np.asarray(model.bandwidths)
    z = (x[None, :] - data) / h
    kernels = np.exp(-0.5 * z * z) / (h * math.sqrt(2.0 * math.pi))
    return float(np.prod(kernels, axis=1).mean())


def fit_models(samples: list[GeometrySample]) -> dict[RegionLabel, KdeModel]:
    """Fit one model per label; every label must have enough samples."""
    return {label: fit_kde(samples, label) for label in RegionLabel}


# Fallback geometry, used when no annotation directory is supplied: typical
# page-fraction boxes for a multi-column broadsheet layout.
_DEFAULT_GEOMETRY: dict[RegionLabel, tuple[tuple[float, float, float, float], ...]] = {
    RegionLabel.HEADLINE: (
        (0.62, 0.050, 0.50, 0.055),
        (0.70, 0.062, 0.50, 0.060),
        (0.55, 0.044, 0.50, 0.050),
        (0.66, 0.056, 0.50, 0.058),
        (0.74, 0.070, 0.50, 0.066),
    ),
    RegionLabel.ARTICLE: (
        (0.150, 0.140, 0.14, 0.30),
        (0.150, 0.210, 0.38, 0.45),
        (0.150, 0.260, 0.62, 0.60),
        (0.150, 0.180, 0.86, 0.40),
        (0.150, 0.310, 0.26, 0.70),
        (0.150, 0.120, 0.50, 0.25),
        (0.150, 0.230, 0.74, 0.55),
    ),
    RegionLabel.SUBHEADING: (
        (0.150, 0.022, 0.14, 0.22),
        (0.150, 0.028, 0.38, 0.35),
        (0.150, 0.024, 0.62, 0.50),
        (0.150, 0.032, 0.86, 0.28),
        (0.150, 0.026, 0.50, 0.40),
    ),
    RegionLabel.ADVERTISEMENT: (
        (0.150, 0.120, 0.14, 0.85),
        (0.150, 0.160, 0.38, 0.82),
        (0.150, 0.100, 0.62, 0.88),
        (0.150, 0.140, 0.86, 0.84),
        (0.150, 0.180, 0.50, 0.80),
    ),
}


def default_geometry_samples() -> list[GeometrySample]:
    return [
        GeometrySample(label, features)
        for label, rows in _DEFAULT_GEOMETRY.items()
        for features in rows
    ]


# ---------------------------------------------------------------------------
# Page layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayoutConfig:
    """Layout constants as page fractions plus element probabilities."""

    margin_fraction: float = 0.02
    gutter_fraction: float = 0.015
    subheading_probability: float = 0.3
    advertisement_probability: float = 0.25
    min_columns: int = 2
    max_columns: int = 7
    item_gap_fraction: float = 0.008
    min_article_fraction: float = 0.04


@dataclass(frozen=True)
class SyntheticPage:
    """A sampled layout: page size, column count, labeled region boxes."""

    width: int
    height: int
    columns: int
    regions: tuple[tuple[BBox, RegionLabel], ...]
    seed: int

    def __post_init__(self):
        if not isinstance(self.regions, tuple):
            object.__setattr__(self, "regions", tuple(self.regions))


HEADLINE_CENTER_TOLERANCE = 0.02
_SAMPLE_RETRIES = 3


def _clamped_height(model: KdeModel, rng, page_h: float, lo: float, hi: float,
                    fit: float | None = None) -> float:
    """Sample a region height in pixels, retrying before shrinking to fit."""
    for _ in range(_SAMPLE_RETRIES):
        h = sample_kde(model, rng)[1] * page_h
        h = min(max(h, lo), hi)
        if fit is None or h <= fit:
            return h
    return min(max(lo, 0.0), fit if fit is not None else hi)


def generate_layout(
    models: dict[RegionLabel, KdeModel],
    page_width: int,
    page_height: int,
    seed: int,
    cfg: LayoutConfig | None = None,
) -> SyntheticPage:
    """Sample one synthetic page layout.

    The headline sits top-center with density-sampled width and height; the
    column count is uniform over the configured range; each column is filled
    top to bottom with density-sampled article heights, each article preceded
    by a subheading with the configured probability, and the trailing article
    of a column is relabeled as an advertisement with the configured
    probability.  Identical arguments always produce an identical page.
    """
    cfg = cfg or LayoutConfig()
    missing = [label.value for label in RegionLabel if label not in models]
    if missing:
        raise ValueError(f"missing density models for labels: {missing}")

    rng = np.random.default_rng(seed)
    W, H = float(page_width), float(page_height)
    mx, my = cfg.margin_fraction * W, cfg.margin_fraction * H
    gap = cfg.item_gap_fraction * H
    min_article = cfg.min_article_fraction * H

    regions: list[tuple[BBox, RegionLabel]] = []

    # Headline: exact horizontal center, sampled width and height.
    head = sample_kde(models[RegionLabel.HEADLINE], rng)
    head_w = min(max(head[0] * W, 0.30 * W), W - 2 * mx)
    head_h = min(max(head[1] * H, 0.030 * H), 0.15 * H)
    head_x1 = (W - head_w) / 2.0
    regions.append((BBox(head_x1, my, head_x1 + head_w, my + head_h), RegionLabel.HEADLINE))

    columns = int(rng.integers(cfg.min_columns, cfg.max_columns + 1))
    gutter = cfg.gutter_fraction * W
    col_w = (W - 2 * mx - (columns - 1) * gutter) / columns
    col_top = my + head_h + my
    col_bottom = H - my

    for c in range(columns):
        x1 = mx + c * (col_w + gutter)
        x2 = x1 + col_w
        y = col_top
        articles_in_column: list[int] = []

        while col_bottom - y >= min_article:
            if rng.random() < cfg.subheading_probability:
                sub_h = _clamped_height(models[RegionLabel.SUBHEADING], rng, H,
                                        0.015 * H, 0.06 * H)
                # Only place the subheading if an article still fits below it.
                if y + sub_h + gap + min_article <= col_bottom:
                    regions.append((BBox(x1, y, x2, y + sub_h), RegionLabel.SUBHEADING))
                    y += sub_h + gap
            remaining = col_bottom - y
            if remaining < min_article:
                break
            art_h = _clamped_height(models[RegionLabel.ARTICLE], rng, H,
                                    min_article, 0.5 * H, fit=remaining)
            regions.append((BBox(x1, y, x2, y + art_h), RegionLabel.ARTICLE))
            articles_in_column.append(len(regions) - 1)
            y += art_h + gap

        if articles_in_column and rng.random() < cfg.advertisement_probability:
            idx = articles_in_column[-1]
            regions[idx] = (regions[idx][0], RegionLabel.ADVERTISEMENT)

    return SyntheticPage(page_width, page_height, columns, tuple(regions), seed)


def check_page(page: SyntheticPage, cfg: LayoutConfig | None = None) -> list[str]:
    """Verify every structural invariant; returns one message per violation."""
    cfg = cfg or LayoutConfig()
    violations = []

    headlines = [(b, l) for b, l in page.regions if l is RegionLabel.HEADLINE]
    if len(headlines) != 1:
        violations.append(f"expected exactly one headline, found {len(headlines)}")
    else:
        box = headlines[0][0]
        center = (box.x1 + box.x2) / 2.0
        if abs(center - page.width / 2.0) > HEADLINE_CENTER_TOLERANCE * page.width:
            violations.append(
                f"headline center {center:.1f} off page center by more than "
                f"{HEADLINE_CENTER_TOLERANCE:.0%} of width"
            )

    if not cfg.min_columns <= page.columns <= cfg.max_columns:
        violations.append(f"column count {page.columns} outside "
                          f"[{cfg.min_columns}, {cfg.max_columns}]")

    eps = 1e-6
    for i, (box, label) in enumerate(page.regions):
        if not box.is_valid():
            violations.append(f"region {i} ({label.value}): invalid box {box.as_tuple()}")
        if box.x1 < -eps or box.y1 < -eps or box.x2 > page.width + eps or box.y2 > page.height + eps:
            violations.append(f"region {i} ({label.value}): out of page bounds")

    articles = [box for box, label in page.regions if label is RegionLabel.ARTICLE]
    for i in range(len(articles)):
        for j in range(i + 1, len(articles)):
            a, b = articles[i], articles[j]
            ix = min(a.x2, b.x2) - max(a.x1, b.x1)
            iy = min(a.y2, b.y2) - max(a.y1, b.y1)
            if ix > eps and iy > eps:
                violations.append(f"articles overlap: {a.as_tuple()} and {b.as_tuple()}")

    return violations


# ---------------------------------------------------------------------------
# Rasterization and corpus output
# ---------------------------------------------------------------------------

_INK = 30
_NOISE_SIGMA = 4.0
_RASTER_STREAM = 7


def label_content(page: SyntheticPage) -> str:
    """Pseudo-annotation label file body for a page (no confidence column)."""
    lines = [
        format_detection_line(
            Detection(box, label, 1.0, "synthetic"),
            page.width, page.height, include_confidence=False,
        )
        for box, label in page.regions
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def _draw_stripes(img: np.ndarray, box: BBox, label: RegionLabel,
                  rng: np.random.Generator) -> None:
    H = img.shape[0]
    base = max(3, round(H * 0.008))
    lh = base * 3 if label is RegionLabel.HEADLINE else base
    x1, y1 = int(round(box.x1)), int(round(box.y1))
    x2, y2 = int(round(box.x2)), int(round(box.y2))
    pad = max(1, round(0.06 * (x2 - x1)))
    y = y1 + pad
    while y + lh <= y2 - pad:
        x = x1 + pad
        # Dark segments of word-ish width so distinct regions carry
        # distinct pixel patterns.
        while x < x2 - pad:
            seg_end = min(x + int(rng.integers(8, 31)), x2 - pad)
            img[y:y + lh, x:seg_end] = _INK
            x = seg_end + int(rng.integers(3, 9))
        y += 2 * lh


def rasterize(page: SyntheticPage, rng: np.random.Generator | None = None) -> tuple[np.ndarray, str]:
    """Render a page to a grayscale image plus its label file content.

    White background, dark segmented text-line stripes per region (headline
    lines three times the body line height), and light Gaussian pixel noise.
    With the default generator the output is a pure function of the page.
    """
    if rng is None:
        rng = np.random.default_rng([_RASTER_STREAM, page.seed])
    img = np.full((page.height, page.width), 255, dtype=np.uint8)
    for box, label in page.regions:
        _draw_stripes(img, box, label, rng)
    noise = rng.normal(0.0, _NOISE_SIGMA, img.shape)
    noisy = np.clip(np.rint(img.astype(np.float64) + noise), 0, 255).astype(np.uint8)
    return noisy, label_content(page)


def page_seed(master_seed: int, index: int) -> int:
    """Stable per-page seed derived from the corpus master seed."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def generate_corpus(
    out_dir: str | Path,
    pages: int,
    width: int,
    height: int,
    seed: int,
    models: dict[RegionLabel, KdeModel],
    cfg: LayoutConfig | None = None,
) -> list[SyntheticPage]:
    """Write a synthetic corpus: images/, labels/, and a manifest.

    Layout: ``images/page_{idx:05}.png`` (8-bit grayscale),
    ``labels/page_{idx:05}.txt``, and ``manifest.csv`` with columns
    ``idx,seed,columns,regions``.  Every page derives its own stream from
    (seed, index), so the corpus is reproducible page by page.
    """
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    generated = []
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["idx", "seed", "columns", "regions"])
        for idx in range(pages):
            page = generate_layout(models, width, height, page_seed(seed, idx), cfg)
            problems = check_page(page, cfg)
            if problems:
                # Generation is constructive, so this indicates a bug rather
                # than bad luck; refuse to write a broken corpus.
                raise AssertionError(f"page {idx} violates invariants: {problems}")
            img, labels = rasterize(page)
            Image.fromarray(img, mode="L").save(out / "images" / f"page_{idx:05}.png")
            (out / "labels" / f"page_{idx:05}.txt").write_text(labels)
            writer.writerow([idx, page.seed, page.columns, len(page.regions)])
            generated.append(page)
    log.info("wrote %d synthetic pages to %s", pages, out)
    return generated


# ---------------------------------------------------------------------------
# Degradation augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and limits for the four degradation transforms."""

    p_brightness_contrast: float = 0.5
    rotation_limit_degrees: float = 2.0
    p_elastic: float = 0.3
    p_blur: float = 0.2
    variants_per_element: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("p_brightness_contrast", "p_elastic", "p_blur"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.rotation_limit_degrees < 0:
            raise ValueError("rotation_limit_degrees must be >= 0")


_ELASTIC_SMOOTH_SIGMA = 8.0
_ELASTIC_MAX_DISPLACEMENT = 3.0


def _elastic_deform(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    dy = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, img.shape), _ELASTIC_SMOOTH_SIGMA)
    dx = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, img.shape), _ELASTIC_SMOOTH_SIGMA)
    peak = max(np.abs(dy).max(), np.abs(dx).max())
    if peak > 0:
        dy *= _ELASTIC_MAX_DISPLACEMENT / peak
        dx *= _ELASTIC_MAX_DISPLACEMENT / peak
    yy, xx = np.meshgrid(np.arange(img.shape[0]), np.arange(img.shape[1]), indexing="ij")
    return ndimage.map_coordinates(img, [yy + dy, xx + dx], order=1,
                                   mode="constant", cval=255.0)


def augment_element(img: np.ndarray, cfg: AugmentConfig | None = None,
                    rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Produce degraded variants of an element image.

    Each variant independently applies brightness/contrast (gain 0.8-1.2,
    bias -25..25), rotation within the configured limit about the center
    with white fill and unchanged dimensions, elastic deformation (smoothed
    displacement field, 3 px peak), and Gaussian blur (sigma 0.5-1.5), each
    gated by its probability.
    """
    cfg = cfg or AugmentConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 image")

    variants = []
    for _ in range(cfg.variants_per_element):
        out = img
        if rng.random() < cfg.p_brightness_contrast:
            gain = rng.uniform(0.8, 1.2)
            bias = rng.uniform(-25.0, 25.0)
            out = np.clip(np.rint(out.astype(np.float64) * gain + bias), 0, 255).astype(np.uint8)
        angle = float(rng.uniform(-cfg.rotation_limit_degrees, cfg.rotation_limit_degrees))
        if angle != 0.0:
            out = ndimage.rotate(out, angle, reshape=False, order=1,
                                 mode="constant", cval=255.0)
        if rng.random() < cfg.p_elastic:
            out = _elastic_deform(out, rng)
        if rng.random() < cfg.p_blur:
            out = ndimage.gaussian_filter(out, float(rng.uniform(0.5, 1.5)))
        variants.append(out.copy() if out is img else out)
    return variants
