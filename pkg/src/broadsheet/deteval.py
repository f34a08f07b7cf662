"""Detection quality scoring: greedy matching, average precision, mAP.

Predictions are matched to ground truth per page, greedily in descending
confidence, each prediction taking the unmatched same-label box of highest
overlap at or above the threshold.  Average precision integrates the full
precision envelope over recall (all-point interpolation), and mAP averages
over present classes and then over thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .fusion import iou
from .model import Detection, DetectionSet, RegionLabel

COCO_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class DetEvalConfig:
    iou_thresholds: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ValueError("iou_thresholds must be non-empty")
        for t in self.iou_thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"iou threshold must be in (0, 1], got {t}")
        if list(self.iou_thresholds) != sorted(set(self.iou_thresholds)):
            raise ValueError("iou_thresholds must be strictly increasing")


def _confidence_order(dets: Sequence[Detection]) -> list[int]:
    # Descending confidence with coordinate tiebreak so matching never
    # depends on input order.
    return sorted(
        range(len(dets)),
        key=lambda i: (
            -dets[i].confidence,
            dets[i].bbox.x1,
            dets[i].bbox.y1,
            dets[i].bbox.x2,
            dets[i].bbox.y2,
        ),
    )


def match_detections(
    predictions: Sequence[Detection],
    ground_truth: Sequence[Detection],
    iou_threshold: float,
) -> list[tuple[int, int | None]]:
    """Greedy one-to-one matching on a single page.

    Returns (prediction index, matched ground-truth index or None) pairs in
    descending prediction confidence.  A prediction matches the unmatched
    ground-truth box of the same label with the highest overlap at or above
    the threshold; overlap ties go to the lowest ground-truth index.
    """
    taken = [False] * len(ground_truth)
    matches = []
    for pi in _confidence_order(predictions):
        pred = predictions[pi]
        best_iou, best_gi = 0.0, None
        for gi, gt in enumerate(ground_truth):
            if taken[gi] or gt.label is not pred.label:
                continue
            overlap = iou(pred.bbox, gt.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou, best_gi = overlap, gi
        if best_gi is not None:
            taken[best_gi] = True
        matches.append((pi, best_gi))
    return matches


def _is_single_page(value) -> bool:
    if isinstance(value, DetectionSet):
        return True
    return len(value) > 0 and isinstance(value[0], Detection)


def _as_pairs(predictions, ground_truth) -> list[tuple[Sequence[Detection], Sequence[Detection]]]:
    """Normalize input to a list of per-page (predictions, ground truth)."""
    if _is_single_page(predictions) or _is_single_page(ground_truth):
        predictions = [predictions]
        ground_truth = [ground_truth]
    if len(predictions) != len(ground_truth):
        raise ValueError(
            f"prediction pages ({len(predictions)}) != ground-truth pages ({len(ground_truth)})"
        )
    pairs = []
    for preds, gts in zip(predictions, ground_truth):
        if isinstance(preds, DetectionSet):
            preds = preds.detections
        if isinstance(gts, DetectionSet):
            gts = gts.detections
        pairs.append((preds, gts))
    return pairs


def average_precision(
    predictions,
    ground_truth,
    iou_threshold: float = 0.5,
    label: RegionLabel | None = None,
) -> float | None:
    """All-point interpolated average precision, pooled over pages.

    Accepts one page or parallel lists of pages; with ``label`` set, both
    sides are filtered to that class first.  Returns None (class absent)
    when there is no ground truth and no predictions, 0.0 when predictions
    exist with no ground truth.
    """
    flagged: list[tuple[float, float, float, float, float, bool]] = []
    total_gt = 0
    for preds, gts in _as_pairs(predictions, ground_truth):
        if label is not None:
            preds = [d for d in preds if d.label is label]
            gts = [d for d in gts if d.label is label]
        total_gt += len(gts)
        for pi, gi in match_detections(preds, gts, iou_threshold):
            d = preds[pi]
            flagged.append(
                (d.confidence, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, gi is not None)
            )

    if total_gt == 0:
        return None if not flagged else 0.0
    if not flagged:
        return 0.0

    flagged.sort(key=lambda row: (-row[0], row[1], row[2], row[3], row[4]))
    recalls, precisions = [], []
    tp = 0
    for rank, row in enumerate(flagged, start=1):
        tp += row[5]
        recalls.append(tp / total_gt)
        precisions.append(tp / rank)

    # Monotone precision envelope, then integrate over recall steps.
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = recalls[0] * precisions[0]
    for i in range(1, len(recalls)):
        ap += (recalls[i] - recalls[i - 1]) * precisions[i]
    return ap


@dataclass(frozen=True)
class MapResult:
    """Per class-threshold AP values plus threshold and overall means."""

    ap: dict[tuple[RegionLabel, float], float] = field(default_factory=dict)
    map_by_threshold: dict[float, float] = field(default_factory=dict)
    map_overall: float = 0.0
    classes: tuple[RegionLabel, ...] = ()


def map_score(predictions, ground_truth, cfg: DetEvalConfig | None = None) -> MapResult:
    """Mean average precision over classes present in the ground truth.

    Classes with no ground truth anywhere are excluded from the mean; a
    class-threshold AP of None never occurs for included classes.  The
    overall value averages the per-threshold means.
    """
    cfg = cfg or DetEvalConfig()
    pairs = _as_pairs(predictions, ground_truth)
    present = sorted(
        {d.label for _, gts in pairs for d in gts},
        key=lambda l: l.class_index,
    )
    if not present:
        raise ValueError("ground truth contains no boxes; mAP is undefined")

    preds_pages = [p for p, _ in pairs]
    gt_pages = [g for _, g in pairs]
    ap: dict[tuple[RegionLabel, float], float] = {}
    map_by_threshold: dict[float, float] = {}
    for thr in cfg.iou_thresholds:
        values = []
        for cls in present:
            value = average_precision(preds_pages, gt_pages, thr, label=cls)
            assert value is not None  # cls has ground truth by construction
            ap[(cls, thr)] = value
            values.append(value)
        map_by_threshold[thr] = sum(values) / len(values)

    overall = sum(map_by_threshold.values()) / len(map_by_threshold)
    return MapResult(ap, map_by_threshold, overall, tuple(present))
