"""Multi-model detection fusion: IoU grouping, weighted averaging, suppression.

The fusion procedure has three steps: group same-label boxes whose IoU
meets the threshold (transitive closure, so the result is independent of
input order), collapse each group to a confidence-weighted average box,
then drop near-duplicate fused boxes.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

from .errors import PageMismatch
from .model import BBox, Detection, DetectionSet, RegionLabel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    """Thresholds for grouping and near-duplicate suppression."""

    iou_threshold: float = 0.7
    duplicate_iou_threshold: float = 0.9

    def __post_init__(self):
        for name in ("iou_threshold", "duplicate_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class FusedBox:
    """Consensus box produced from one group of member detections."""

    bbox: BBox
    label: RegionLabel
    confidence: float
    member_count: int
    member_sources: tuple[str, ...] = field(default_factory=tuple)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0.0 else 0.0


def group_boxes(detections: list[Detection] | tuple[Detection, ...],
                cfg: FusionConfig | None = None) -> list[list[int]]:
    """Partition detections into same-label IoU groups.

    Groups are the connected components of the graph whose edges join
    detections with identical labels and pairwise IoU at or above
    ``cfg.iou_threshold``.  Returns index groups ordered by their smallest
    member, members ascending, so the partition is deterministic.
    """
    cfg = cfg or FusionConfig()
    n = len(detections)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if detections[i].label is not detections[j].label:
                continue
            if iou(detections[i].bbox, detections[j].bbox) >= cfg.iou_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[root] for root in sorted(groups)]


def _member_sort_key(det: Detection):
    b = det.bbox
    return (b.x1, b.y1, b.x2, b.y2, det.confidence, det.source_model)


def fuse_group(group: list[Detection] | tuple[Detection, ...]) -> FusedBox:
    """Collapse one uniform-label group to its confidence-weighted box.

    Each coordinate is the weighted mean of the member coordinates with the
    member confidences as weights; the fused confidence is the plain mean of
    the member confidences.  An all-zero-confidence group falls back to the
    unweighted mean.  Members are summed in a canonical order so the result
    is bit-identical for any input permutation.
    """
    if not group:
        raise ValueError("cannot fuse an empty group")
    labels = {det.label for det in group}
    if len(labels) != 1:
        raise ValueError(f"group mixes labels: {sorted(l.value for l in labels)}")

    members = sorted(group, key=_member_sort_key)
    weights = [det.confidence for det in members]
    total = sum(weights)
    if total <= 0.0:
        weights = [1.0] * len(members)
        total = float(len(members))

    coords = []
    for axis in range(4):
        values = [det.bbox.as_tuple()[axis] for det in members]
        fused = sum(w * v for w, v in zip(weights, values)) / total
        # Weighted means stay inside the member range mathematically; the
        # clip only guards against float rounding at the boundary.
        fused = min(max(fused, min(values)), max(values))
        coords.append(fused)

    confidence = sum(det.confidence for det in members) / len(members)
    return FusedBox(
        bbox=BBox(*coords),
        label=members[0].label,
        confidence=confidence,
        member_count=len(members),
        member_sources=tuple(det.source_model for det in members),
    )


def _suppress_sort_key(box: FusedBox):
    # Confidence desc, then x1, y1, label, remaining coordinates: a total
    # order, so the output sequence is bit-stable no matter how the input
    # was arranged.
    b = box.bbox
    return (-box.confidence, b.x1, b.y1, box.label.value, b.x2, b.y2)


def suppress_near_duplicates(boxes: list[FusedBox] | tuple[FusedBox, ...],
                             cfg: FusionConfig | None = None) -> list[FusedBox]:
    """Drop boxes that nearly coincide with a higher-confidence kept box.

    Boxes are visited in descending confidence (ties by x1, then y1, then
    label); a box is dropped when its IoU with an already-kept box of the
    same label reaches ``cfg.duplicate_iou_threshold``.  Output keeps the
    visit order, so the operation is idempotent.
    """
    cfg = cfg or FusionConfig()
    kept: list[FusedBox] = []
    for box in sorted(boxes, key=_suppress_sort_key):
        duplicate = any(
            box.label is other.label
            and iou(box.bbox, other.bbox) >= cfg.duplicate_iou_threshold
            for other in kept
        )
        if not duplicate:
            kept.append(box)
    return kept


def fuse_boxes(detections: list[Detection] | tuple[Detection, ...],
               cfg: FusionConfig | None = None) -> list[FusedBox]:
    """Run the full three-step fusion over one page's pooled detections."""
    cfg = cfg or FusionConfig()
    groups = group_boxes(detections, cfg)
    fused = [fuse_group([detections[i] for i in group]) for group in groups]
    return suppress_near_duplicates(fused, cfg)


def fuse_detections(per_model,
                    cfg: FusionConfig | None = None) -> DetectionSet:
    """Fuse several models' detection sets for the same page.

    Accepts a sequence of detection sets or a mapping of model name to set.
    All sets must agree on page_id and image dimensions (PageMismatch
    otherwise).  The output is a DetectionSet whose detections carry
    ``source_model="fusion"``; the result is deterministic under any
    permutation of the inputs.
    """
    if isinstance(per_model, Mapping):
        per_model = [per_model[name] for name in sorted(per_model)]
    else:
        per_model = list(per_model)
    if not per_model:
        raise ValueError("need at least one detection set")
    first = per_model[0]
    for ds in per_model[1:]:
        if ds.page_id != first.page_id:
            raise PageMismatch(f"page ids differ: {first.page_id!r} vs {ds.page_id!r}")
        if (ds.image_width, ds.image_height) != (first.image_width, first.image_height):
            raise PageMismatch(
                f"page dimensions differ on {first.page_id!r}: "
                f"{first.image_width}x{first.image_height} vs "
                f"{ds.image_width}x{ds.image_height}"
            )

    pooled = [det for ds in per_model for det in ds.detections]
    # Canonical pool order makes grouping and averaging independent of the
    # order the sets were supplied in.
    pooled.sort(key=lambda d: (_member_sort_key(d), d.label.value))
    fused = fuse_boxes(pooled, cfg)
    detections = tuple(
        Detection(fb.bbox, fb.label, fb.confidence, "fusion") for fb in fused
    )
    return DetectionSet(first.page_id, first.image_width, first.image_height, detections)
