"""Unsupervised transcript quality metrics.

Three annotation-free scores over a page's region transcripts:

* coherence: mean per-region fraction of tokens found in a reference word
  list (higher is better);
* entropy: Shannon entropy, in bits, of the n-gram distribution pooled over
  the page's regions (higher means more diverse text);
* redundancy: fraction of ordered region pairs whose normalized texts are
  identical (lower is better; 0 for single-region pages).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import PageTranscript

# Runs of Unicode letters; digits and underscore split tokens like any
# other non-letter.
_WORD_RE = re.compile(r"[^\W\d_]+", re.UNICODE)

_WS_RE = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphabetic character."""
    return _WORD_RE.findall(text.lower())


def normalize_text(text: str) -> str:
    """Collapse whitespace runs, trim, lowercase: text equality for trs()."""
    return _WS_RE.sub(" ", text).strip().lower()


@dataclass(frozen=True)
class Vocabulary:
    """Reference word list for the coherence score."""

    words: frozenset[str]
    source: str = ""

    def __post_init__(self):
        if not self.words:
            raise ValueError("vocabulary must not be empty")
        bad = [w for w in self.words if w != w.lower() or w != w.strip() or not w]
        if bad:
            raise ValueError(f"vocabulary entries must be lowercase and trimmed: {bad[:5]}")

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)


def load_vocabulary(path: str | Path) -> Vocabulary:
    """Read a word list: one word per line, ``#`` comments and blanks ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read vocabulary file {path}: {exc}") from exc
    words = set()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        words.add(line.lower())
    if not words:
        raise ConfigError(f"vocabulary file {path} contains no words")
    return Vocabulary(frozenset(words), source=str(path))


@dataclass(frozen=True)
class NgramConfig:
    """N-gram unit and order for the entropy metric."""

    unit: str = "word"  # "word" or "character"
    n: int = 1

    def __post_init__(self):
        if self.unit not in ("word", "character"):
            raise ValueError(f"unit must be 'word' or 'character', got {self.unit!r}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


@dataclass(frozen=True)
class NgramDistribution:
    """Observed n-gram counts pooled over a page."""

    counts: dict[str, int]
    total: int

    def probability(self, gram: str) -> float:
        return self.counts[gram] / self.total


def scs(page: PageTranscript, vocab: Vocabulary) -> float | None:
    """Mean in-vocabulary token fraction over regions that have tokens.

    Regions with no tokens are excluded from the mean; returns None when
    every region is tokenless (the score is undefined, not zero).
    """
    fractions = []
    for region in page.regions:
        tokens = tokenize(region.ocr_text)
        if not tokens:
            continue
        hits = sum(1 for t in tokens if t in vocab)
        fractions.append(hits / len(tokens))
    if not fractions:
        return None
    return sum(fractions) / len(fractions)


def ngram_distribution(page: PageTranscript, cfg: NgramConfig | None = None) -> NgramDistribution:
    """Count n-grams pooled across the page's regions.

    Word n-grams are taken over each region's token sequence, character
    n-grams over each region's raw text; n-grams never span region
    boundaries.  Word n-grams are keyed by their space-joined form.
    """
    cfg = cfg or NgramConfig()
    counts: Counter[str] = Counter()
    for region in page.regions:
        if cfg.unit == "word":
            units = tokenize(region.ocr_text)
            for i in range(len(units) - cfg.n + 1):
                counts[" ".join(units[i:i + cfg.n])] += 1
        else:
            text = region.ocr_text
            for i in range(len(text) - cfg.n + 1):
                counts[text[i:i + cfg.n]] += 1
    return NgramDistribution(dict(counts), sum(counts.values()))


def red(dist: NgramDistribution) -> float:
    """Shannon entropy of the distribution, in bits.

    Computed as log2(total) - sum(c*log2 c)/total, which is exact for the
    empirical distribution and avoids forming each probability separately.
    Returns 0.0 for an empty or single-outcome distribution.
    """
    total = dist.total
    if total <= 0 or len(dist.counts) <= 1:
        return 0.0
    weighted = sum(c * math.log2(c) for c in dist.counts.values())
    return max(math.log2(total) - weighted / total, 0.0)


def trs(page: PageTranscript, exact: bool = False) -> float:
    """Fraction of ordered region pairs with identical text.

    Texts are compared after whitespace normalization and lowercasing
    unless ``exact`` is set, in which case comparison is byte-exact.
    Returns 0.0 for pages with fewer than two regions.
    """
    n = len(page.regions)
    if n <= 1:
        return 0.0
    if exact:
        texts = [r.ocr_text for r in page.regions]
    else:
        texts = [normalize_text(r.ocr_text) for r in page.regions]
    multiplicity = Counter(texts)
    matches = sum(m * (m - 1) for m in multiplicity.values())
    return matches / (n * (n - 1))


@dataclass(frozen=True)
class MetricsRecord:
    """Per-page metric bundle for one pipeline."""

    page_id: str
    pipeline_id: str
    scs: float | None
    red: float
    trs: float
    region_count: int


def evaluate_page(page: PageTranscript, vocab: Vocabulary,
                  cfg: NgramConfig | None = None) -> MetricsRecord:
    """Score one page transcript with all three metrics."""
    return MetricsRecord(
        page_id=page.page_id,
        pipeline_id=page.pipeline_id,
        scs=scs(page, vocab),
        red=red(ngram_distribution(page, cfg)),
        trs=trs(page),
        region_count=len(page.regions),
    )


@dataclass(frozen=True)
class PipelineSummary:
    """Per-pipeline means over a corpus of page records."""

    pipeline_id: str
    pages: int
    scs_mean: float | None
    red_mean: float
    trs_mean: float


def aggregate(records: list[MetricsRecord] | tuple[MetricsRecord, ...]) -> list[PipelineSummary]:
    """Average records per pipeline, sorted by pipeline id.

    Pages with an undefined coherence score are excluded from the coherence
    mean but still counted for the entropy and redundancy means.
    """
    by_pipeline: dict[str, list[MetricsRecord]] = {}
    for rec in records:
        by_pipeline.setdefault(rec.pipeline_id, []).append(rec)

    summaries = []
    for pipeline_id in sorted(by_pipeline):
        # Page order inside a pipeline is fixed so float sums are bit-stable.
        group = sorted(by_pipeline[pipeline_id], key=lambda r: r.page_id)
        defined = [r.scs for r in group if r.scs is not None]
        summaries.append(PipelineSummary(
            pipeline_id=pipeline_id,
            pages=len(group),
            scs_mean=sum(defined) / len(defined) if defined else None,
            red_mean=sum(r.red for r in group) / len(group),
            trs_mean=sum(r.trs for r in group) / len(group),
        ))
    return summaries
