"""Report emission: delimited metric tables plus rendered figures.

Per-page records and pipeline aggregates are written as CSV with full-
precision floats (shortest round-trip repr), alongside a long-format table
convenient for external plotting tools.  A figure per metric (box plot of
per-page values grouped by pipeline) is rendered to PNG with a
deterministic, file-only backend.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from .errors import ConfigError
from .metrics import MetricsRecord, PipelineSummary, aggregate

log = logging.getLogger(__name__)

PER_PAGE_HEADER = ["pipeline", "page_id", "region_count", "scs", "red", "trs"]
AGGREGATE_HEADER = ["pipeline", "pages", "scs_mean", "red_mean", "trs_mean"]
LONG_HEADER = ["pipeline", "page_id", "metric", "value"]

_METRIC_TITLES = {
    "scs": "Semantic coherence (in-vocabulary fraction)",
    "red": "Region entropy (bits)",
    "trs": "Text redundancy (duplicate pair fraction)",
}


def _fmt(value: float | None) -> str:
    # str() of a float is its shortest exact round-trip form.
    return "" if value is None else str(value)


def _sorted_records(records: list[MetricsRecord]) -> list[MetricsRecord]:
    return sorted(records, key=lambda r: (r.pipeline_id, r.page_id))


def write_per_page_csv(records: list[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_PAGE_HEADER)
        for r in _sorted_records(records):
            writer.writerow(
                [r.pipeline_id, r.page_id, r.region_count,
                 _fmt(r.scs), _fmt(r.red), _fmt(r.trs)]
            )


def read_per_page_csv(path: str | Path) -> list[MetricsRecord]:
    """Parse a per-page table back into records, exactly."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PER_PAGE_HEADER:
            raise ConfigError(f"unexpected per-page header in {path}: {reader.fieldnames}")
        for row in reader:
            records.append(
                MetricsRecord(
                    page_id=row["page_id"],
                    pipeline_id=row["pipeline"],
                    scs=float(row["scs"]) if row["scs"] != "" else None,
                    red=float(row["red"]),
                    trs=float(row["trs"]),
                    region_count=int(row["region_count"]),
                )
            )
    return records


def write_aggregate_csv(summaries: list[PipelineSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for s in sorted(summaries, key=lambda s: s.pipeline_id):
            writer.writerow(
                [s.pipeline_id, s.pages, _fmt(s.scs_mean), _fmt(s.red_mean), _fmt(s.trs_mean)]
            )


def write_long_csv(records: list[MetricsRecord], path: str | Path) -> None:
    """Long-format table: one row per (pipeline, page, metric) value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LONG_HEADER)
        for r in _sorted_records(records):
            for metric in ("scs", "red", "trs"):
                value = getattr(r, metric)
                if value is None:
                    continue  # undefined scs: no row rather than a fake zero
                writer.writerow([r.pipeline_id, r.page_id, metric, _fmt(value)])


def render_figures(records: list[MetricsRecord], out_dir: str | Path) -> list[Path]:
    """Render one box-plot PNG per metric, grouped by pipeline."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = _sorted_records(records)
    pipelines = sorted({r.pipeline_id for r in ordered})

    paths = []
    for metric, title in _METRIC_TITLES.items():
        groups = []
        labels = []
        for pid in pipelines:
            values = [getattr(r, metric) for r in ordered
                      if r.pipeline_id == pid and getattr(r, metric) is not None]
            if values:
                groups.append(values)
                labels.append(pid)
        if not groups:
            continue
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.boxplot(groups, tick_labels=labels)
        ax.set_title(title)
        ax.set_ylabel(metric)
        ax.set_xlabel("pipeline")
        fig.tight_layout()
        path = out / f"{metric}_boxplot.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def emit_report(
    records: list[MetricsRecord],
    out_dir: str | Path,
    figures: bool = True,
) -> dict[str, object]:
    """Write the full report bundle; returns the emitted paths.

    Bundle: per_page.csv, aggregate.csv, metrics_long.csv, and (unless
    disabled) figures/<metric>_boxplot.png.
    """
    if not records:
        raise ConfigError("cannot emit a report from zero metric records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_page = out / "per_page.csv"
    agg = out / "aggregate.csv"
    long_form = out / "metrics_long.csv"
    write_per_page_csv(records, per_page)
    write_aggregate_csv(aggregate(records), agg)
    write_long_csv(records, long_form)

    emitted: dict[str, object] = {
        "per_page": per_page,
        "aggregate": agg,
        "metrics_long": long_form,
    }
    if figures:
        emitted["figures"] = render_figures(records, out / "figures")
    log.info("report written to %s", out)
    return emitted
