"""Explainable per-tooth finding summaries and their ROC evaluation.

Each decoded tooth gets a predictive value per finding type from the pixel
composition of its mask inside the functional segmentation map. The
missing-tooth value is 1 minus the assigned class probability (1.0 for
positions no object was assigned to); it is an artifact-defined confidence
score, not a pixel fraction. Implant detections carry no tooth number, so
each one is mapped to the nearest free position by interpolating box centers
along the decoded arch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coherence import StudyDecodeResult
from .core.masks import BinaryMask, MaskShapeError
from .core.studyfile import FINDING_NAMES, N_FINDINGS
from .core.types import (
    C_SEG,
    IMPLANT_CLASS,
    LOWER_SLOTS,
    N_TEETH,
    UPPER_SLOTS,
    Detection,
    SegmentationMap,
)

# Segmentation class feeding each of findings 1..4 (impacted, crown & bridge,
# restoration, root-filled); finding 5 (implant) reads segmentation class 6.
_FINDING_SEG_CLASS = {1: 2, 2: 3, 3: 4, 4: 5, 5: 6}

# Operating-point profiles for binarized output. The default profile holds
# the per-finding area thresholds at the max-F1 operating points reported for
# the reference clinical dataset; the implant threshold is an artifact
# default (no published operating point exists for it).
THRESHOLD_PROFILES: dict[str, tuple[float, ...]] = {
    "table1": (0.242, 0.345, 0.259, 0.027, 0.0033, 0.5),
}


@dataclass(frozen=True)
class FindingSummary:
    """Predictive values per FDI position (rows) and finding type (columns)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_TEETH, N_FINDINGS):
            raise ValueError(f"values must be {N_TEETH}x{N_FINDINGS}, got {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("predictive values must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def binarized(self, thresholds: Sequence[float]) -> np.ndarray:
        t = np.asarray(thresholds, dtype=np.float64)
        if t.shape != (N_FINDINGS,):
            raise ValueError(f"need {N_FINDINGS} thresholds, got shape {t.shape}")
        return self.values >= t


def finding_fractions(seg: SegmentationMap, mask: BinaryMask) -> np.ndarray:
    """Share of each functional class among the mask's pixels; sums to 1."""
    if (seg.width, seg.height) != (mask.width, mask.height):
        raise MaskShapeError(
            f"segmentation is {seg.width}x{seg.height}, mask is {mask.width}x{mask.height}"
        )
    if mask.area == 0:
        raise ValueError("finding fractions are undefined for an empty mask")
    counts = np.bincount(seg.labels[mask.bits], minlength=C_SEG)
    return counts / mask.area


def _map_implants_to_slots(
    implant_dets: list[tuple[int, Detection]],
    assigned_centers: dict[int, tuple[float, float]],
    width: int,
    height: int,
) -> dict[int, int]:
    """Heuristic FDI slot for each pass-through implant detection.

    Decoded teeth anchor a slot-versus-x interpolation per arch; the implant
    is placed on the arch whose decoded teeth sit closest in y, then rounded
    to the nearest free slot. With no decoded teeth at all, slots are spread
    uniformly across the image width and the arch follows the y midline.
    """
    arches = (UPPER_SLOTS, LOWER_SLOTS)
    anchors: list[list[tuple[float, int]]] = [[], []]
    medians: list[float | None] = [None, None]
    for a, slots in enumerate(arches):
        pts = [
            (assigned_centers[s][0], s - slots[0])
            for s in slots
            if s in assigned_centers
        ]
        pts.sort()
        anchors[a] = pts
        ys = [assigned_centers[s][1] for s in slots if s in assigned_centers]
        medians[a] = float(np.median(ys)) if ys else None

    default_slope = 16.0 / width  # slots per pixel when anchors are too thin

    def estimate(arch: int, cx: float) -> float:
        pts = anchors[arch]
        xs = np.asarray([p[0] for p in pts])
        ks = np.asarray([p[1] for p in pts], dtype=np.float64)
        if len(pts) >= 2 and float(xs.max() - xs.min()) > 1e-6:
            # Least-squares slot-vs-x line; exact on an evenly spaced arch
            # and extrapolates past the outermost decoded tooth.
            slope, intercept = np.polyfit(xs, ks, 1)
            return float(slope * cx + intercept)
        if len(pts) >= 1:
            return float(ks[0] + default_slope * (cx - xs[0]))
        return 16.0 * cx / width - 0.5

    occupied = set(assigned_centers)
    # Higher-confidence implants pick their slot first.
    order = sorted(
        range(len(implant_dets)),
        key=lambda i: (-implant_dets[i][1].probs[IMPLANT_CLASS], implant_dets[i][0]),
    )
    placed: dict[int, int] = {}
    for i in order:
        det_index, det = implant_dets[i]
        cx, cy = det.box_center
        with_pts = [a for a in range(2) if anchors[a]]
        if with_pts:
            arch = min(with_pts, key=lambda a: abs(cy - medians[a]))
        else:
            arch = 0 if cy < height / 2 else 1
        est = estimate(arch, cx)
        base = arches[arch][0]
        in_arch = int(round(min(max(est, 0.0), 15.0)))
        free = [k for k in range(16) if base + k not in occupied]
        if not free:
            continue  # fully occupied arch: keep the implant unplaced
        k = min(free, key=lambda s: (abs(s - in_arch), s))
        placed[det_index] = base + k
        occupied.add(base + k)
    return placed


def summarize_study(
    seg: SegmentationMap,
    decode: StudyDecodeResult,
    detections: Sequence[Detection],
) -> FindingSummary:
    """Assemble the 32 x 6 finding matrix for one decoded study.

    Positions with no assigned object score missing = 1 and zero for the
    mask-based findings; assigned positions score missing = 1 - p and take
    their other values from the pixel composition of the object's mask.
    """
    if decode.assignment.n_objects != len(detections):
        raise ValueError(
            f"decode covers {decode.assignment.n_objects} objects, "
            f"got {len(detections)} detections"
        )
    values = np.zeros((N_TEETH, N_FINDINGS))
    values[:, 0] = 1.0

    assigned_centers: dict[int, tuple[float, float]] = {}
    for n, slot in decode.assignment.pairs():
        det = detections[n]
        mask = det.mask_for_class(slot + 1)
        fractions = finding_fractions(seg, mask)
        values[slot, 0] = 1.0 - float(det.probs[slot + 1])
        for finding, seg_class in _FINDING_SEG_CLASS.items():
            values[slot, finding] = fractions[seg_class]
        assigned_centers[slot] = det.box_center

    implant_dets = [(n, detections[n]) for n in decode.passthrough_implants]
    if implant_dets:
        placed = _map_implants_to_slots(
            implant_dets, assigned_centers, seg.width, seg.height
        )
        for det_index, slot in placed.items():
            det = detections[det_index]
            fractions = finding_fractions(seg, det.mask_for_class(IMPLANT_CLASS))
            values[slot, 5] = fractions[6]
    return FindingSummary(values)


# -- ROC ----------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """Threshold sweep with the trapezoidal AUC and max-F1 operating point.

    ``points`` holds (threshold, TPR, TNR, F1) rows at strictly decreasing
    thresholds; a prediction is positive when its score >= threshold.
    """

    points: tuple[tuple[float, float, float, float], ...]
    auc: float
    max_f1: float
    max_f1_threshold: float


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """ROC sweep over all distinct score thresholds.

    The trapezoidal AUC is cross-checked against the pairwise-ranking
    (rank-sum) formulation; ties in score receive half credit in both, so
    the two agree to float precision.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # Collapse runs of equal score: one operating point per distinct value.
    boundary = np.flatnonzero(np.diff(s_sorted)) + 1
    ends = np.concatenate([boundary, [s.size]])
    tp_cum = np.cumsum(y_sorted)
    tps = tp_cum[ends - 1]
    fps = ends - tps
    thresholds = s_sorted[ends - 1]

    tpr = tps / n_pos
    fpr = fps / n_neg
    tnr = 1.0 - fpr
    fns = n_pos - tps
    f1 = 2.0 * tps / (2.0 * tps + fns + fps)

    auc_trapezoid = float(np.trapezoid(np.concatenate([[0.0], tpr]), np.concatenate([[0.0], fpr])))
    auc_ranksum = _auc_ranksum(s, y)
    if abs(auc_trapezoid - auc_ranksum) > 1e-9:
        raise AssertionError(
            f"AUC cross-check failed: trapezoid {auc_trapezoid!r} vs rank-sum {auc_ranksum!r}"
        )

    best = int(np.argmax(f1))
    points = tuple(
        (float(thresholds[i]), float(tpr[i]), float(tnr[i]), float(f1[i]))
        for i in range(thresholds.size)
    )
    return RocCurve(points, auc_trapezoid, float(f1[best]), float(thresholds[best]))


def _auc_ranksum(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outranks a random negative (ties half)."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    rank = 1
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (rank + rank + (j - i)) / 2.0
        rank += j - i + 1
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    pos_rank_sum = float(ranks[labels].sum())
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pooled_finding_scores(
    predicted: Sequence[FindingSummary], reference: Sequence[np.ndarray]
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per finding type, pool (scores, labels) across studies and positions.

    Scores live on FDI positions, so a finding predicted at the wrong tooth
    counts against both that position (false positive) and the true one
    (missed), i.e. credit requires the tooth number itself to be right.
    """
    if len(predicted) != len(reference):
        raise ValueError("need one reference matrix per predicted summary")
    out = []
    for f in range(N_FINDINGS):
        scores = np.concatenate([p.values[:, f] for p in predicted])
        labels = np.concatenate([np.asarray(r, dtype=bool)[:, f] for r in reference])
        out.append((scores, labels))
    return out


def finding_roc_curves(
    predicted: Sequence[FindingSummary], reference: Sequence[np.ndarray]
) -> dict[str, RocCurve | None]:
    """ROC per finding type; None when a type lacks both label classes."""
    curves: dict[str, RocCurve | None] = {}
    for name, (scores, labels) in zip(FINDING_NAMES, pooled_finding_scores(predicted, reference)):
        if labels.all() or not labels.any():
            curves[name] = None
        else:
            curves[name] = roc_curve(scores, labels)
    return curves
