"""Detection and segmentation evaluation.

Matching is greedy by descending confidence; a prediction becomes a true
positive when its mask IoU with a still-unmatched ground-truth object exceeds
the threshold (strictly, so threshold 0 means "any positive overlap") and,
in class-aware mode, the classes agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.masks import BinaryMask, MaskShapeError, intersection_area, mask_iou
from .core.types import C_SEG, SegmentationMap


@dataclass(frozen=True)
class LabeledMask:
    """One evaluated object: silhouette, class label, and confidence."""

    mask: BinaryMask
    label: int
    confidence: float = 1.0


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one image's predictions against ground truth."""

    # Per prediction: "TP" or "FP", and the matched ground-truth index (or None).
    statuses: tuple[str, ...]
    matched_gt: tuple[int | None, ...]
    # Per ground-truth object: True when some prediction matched it.
    gt_matched: tuple[bool, ...]
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(1 for s in self.statuses if s == "TP")

    @property
    def fp(self) -> int:
        return sum(1 for s in self.statuses if s == "FP")

    @property
    def fn(self) -> int:
        return sum(1 for m in self.gt_matched if not m)


def _check_same_dims(pred: Sequence[LabeledMask], gt: Sequence[LabeledMask]) -> None:
    dims = {(o.mask.width, o.mask.height) for o in pred} | {
        (o.mask.width, o.mask.height) for o in gt
    }
    if len(dims) > 1:
        raise MaskShapeError(f"masks must share dimensions, got {sorted(dims)}")


def match_detections(
    pred: Sequence[LabeledMask],
    gt: Sequence[LabeledMask],
    iou_threshold: float,
    class_aware: bool = True,
) -> MatchResult:
    """Greedily match predictions to ground truth in confidence order.

    Each ground-truth object is matched at most once; among eligible ground
    truths the one with the highest IoU wins (lowest index on ties).
    """
    _check_same_dims(pred, gt)
    order = sorted(range(len(pred)), key=lambda i: (-pred[i].confidence, i))
    statuses = ["FP"] * len(pred)
    matched: list[int | None] = [None] * len(pred)
    taken = [False] * len(gt)
    for i in order:
        best_j, best_iou = None, 0.0
        for j, g in enumerate(gt):
            if taken[j]:
                continue
            if class_aware and g.label != pred[i].label:
                continue
            iou = mask_iou(pred[i].mask, g.mask)
            if iou <= iou_threshold:
                continue
            if best_j is None or iou > best_iou:
                best_j, best_iou = j, iou
        if best_j is not None:
            statuses[i] = "TP"
            matched[i] = best_j
            taken[best_j] = True
    return MatchResult(tuple(statuses), tuple(matched), tuple(taken), iou_threshold)


def ap_from_scored(scored: Sequence[tuple[float, int, int, bool]], n_gt: int) -> float:
    """All-point interpolated AP from (confidence, image, index, is_tp) rows.

    Rows are ranked by confidence (ties broken by image then index), the
    precision envelope is taken, and precision is integrated over recall.
    """
    if n_gt == 0:
        raise ValueError("average precision is undefined without ground-truth objects")
    if not scored:
        return 0.0
    ranked = sorted(scored, key=lambda t: (-t[0], t[1], t[2]))
    tps = np.cumsum([1 if hit else 0 for *_ignored, hit in ranked])
    fps = np.cumsum([0 if hit else 1 for *_ignored, hit in ranked])
    recall = tps / n_gt
    precision = tps / (tps + fps)
    # Precision envelope: best precision at this recall or beyond.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    recall = np.concatenate(([0.0], recall))
    return float(np.sum(np.diff(recall) * envelope))


def average_precision(
    pred_lists: Sequence[Sequence[LabeledMask]],
    gt_lists: Sequence[Sequence[LabeledMask]],
    iou_threshold: float,
    class_aware: bool = True,
) -> float:
    """All-point interpolated average precision over pooled detections.

    Per-image matching decides TP/FP; detections are then ranked by
    confidence across the dataset and the precision envelope is integrated
    over recall.
    """
    if len(pred_lists) != len(gt_lists):
        raise ValueError("pred_lists and gt_lists must have equal length")
    n_gt = sum(len(g) for g in gt_lists)
    scored: list[tuple[float, int, int, bool]] = []
    for img, (preds, gts) in enumerate(zip(pred_lists, gt_lists)):
        match = match_detections(preds, gts, iou_threshold, class_aware)
        for i, status in enumerate(match.statuses):
            scored.append((preds[i].confidence, img, i, status == "TP"))
    return ap_from_scored(scored, n_gt)


def da_fa_counts(tp: int, fn: int, fp: int) -> tuple[float, float]:
    """Detection and identification accuracy from raw counts.

    TP means detected and correctly numbered, FN a ground-truth tooth not
    correctly recovered, FP a spurious detection. The DA ratio is implemented
    exactly as printed in its source: (TP + FN) / (TP + FN + FP).
    """
    total = tp + fn + fp
    if total == 0:
        raise ValueError("DA/FA are undefined when all counts are zero")
    return (tp + fn) / total, tp / total


def da_fa(match: MatchResult) -> tuple[float, float]:
    return da_fa_counts(match.tp, match.fn, match.fp)


def per_image_iou(
    pred_masks: Sequence[BinaryMask],
    gt_masks: Sequence[BinaryMask],
    assignment_to_gt: Sequence[int | None],
) -> float:
    """Dataset-style IoU over one image: summed matched intersections over
    summed unions, with unmatched masks on either side counting toward the
    union only."""
    if len(assignment_to_gt) != len(pred_masks):
        raise ValueError("assignment_to_gt must map every prediction")
    inter = 0
    union = 0
    gt_used = set()
    for mask, j in zip(pred_masks, assignment_to_gt):
        if j is None:
            union += mask.area
            continue
        if j in gt_used:
            raise ValueError(f"ground-truth object {j} paired twice")
        gt_used.add(j)
        overlap = intersection_area(mask, gt_masks[j])
        inter += overlap
        union += mask.area + gt_masks[j].area - overlap
    for j, mask in enumerate(gt_masks):
        if j not in gt_used:
            union += mask.area
    if union == 0:
        raise ValueError("per-image IoU is undefined for an empty union")
    return inter / union


SEG_ABSENT = None  # sentinel for classes present in neither map


def segmentation_iou(pred: SegmentationMap, gt: SegmentationMap) -> list[float | None]:
    """Per-class IoU between two label maps.

    Classes absent from both maps report ``None`` and should be excluded
    from averages.
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise MaskShapeError(
            f"segmentation dimensions differ: {pred.width}x{pred.height} "
            f"vs {gt.width}x{gt.height}"
        )
    out: list[float | None] = []
    for c in range(C_SEG):
        p = pred.labels == c
        g = gt.labels == c
        union = int(np.count_nonzero(p | g))
        if union == 0:
            out.append(SEG_ABSENT)
        else:
            out.append(int(np.count_nonzero(p & g)) / union)
    return out


def mean_present_iou(per_class: Sequence[float | None]) -> float:
    values = [v for v in per_class if v is not None]
    if not values:
        raise ValueError("no class present in either map")
    return float(np.mean(values))
