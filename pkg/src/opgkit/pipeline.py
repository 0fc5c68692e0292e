"""Study-level evaluation pipelines shared by the CLI and the test suite.

Studies are processed one at a time so mask bitmaps never accumulate; each
study reduces to scored detections, match counts, and finding values before
the next is loaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .coherence import (
    DecoderConfig,
    KeptDetection,
    StudyDecodeResult,
    argmax_nms,
    decode_study,
)
from .core.studyfile import Study
from .core.types import BACKGROUND_CLASS
from .metrics import LabeledMask, ap_from_scored, da_fa_counts, match_detections, per_image_iou
from .summary import FindingSummary, summarize_study

DecodeMode = Literal["dcr", "argmax-nms", "raw"]

# Class-aware matching threshold used for DA/FA and per-image IoU reporting.
IDENTITY_IOU = 0.5


def kept_for_mode(
    study: Study,
    mode: DecodeMode,
    decoder_config: DecoderConfig | None = None,
    nms_iou: float = 0.5,
) -> list[KeptDetection]:
    if mode == "dcr":
        return decode_study(study.detections, decoder_config).kept(study.detections)
    if mode == "argmax-nms":
        return argmax_nms(study.detections, nms_iou)
    if mode == "raw":
        return [
            KeptDetection(i, det.argmax_class, float(det.probs[det.argmax_class]))
            for i, det in enumerate(study.detections)
            if det.argmax_class != BACKGROUND_CLASS
        ]
    raise ValueError(f"unknown decode mode: {mode!r}")


def _labeled(study: Study, kept: Sequence[KeptDetection]) -> list[LabeledMask]:
    return [
        LabeledMask(
            study.detections[k.index].mask_for_class(k.class_id), k.class_id, k.confidence
        )
        for k in kept
    ]


def _gt_labeled(study: Study) -> list[LabeledMask]:
    gt = study.ground_truth
    return [
        LabeledMask(det.mask_for_class(cls), cls, 1.0)
        for det, cls in zip(gt.detections, gt.classes)
    ]


@dataclass
class DetectionRecord:
    """Evaluation residue of one study, small enough to pool in memory."""

    n_gt: int
    # Per IoU threshold: (confidence, is_tp) tuples in detection order.
    scored: dict[float, list[tuple[float, bool]]]
    # Class-aware counts at IDENTITY_IOU.
    tp: int
    fn: int
    fp: int
    image_iou: float


def evaluate_study_detections(
    study: Study,
    mode: DecodeMode,
    iou_thresholds: Sequence[float],
    decoder_config: DecoderConfig | None = None,
    nms_iou: float = 0.5,
) -> DetectionRecord:
    if study.ground_truth is None:
        raise ValueError("detection evaluation requires a ground-truth block")
    kept = kept_for_mode(study, mode, decoder_config, nms_iou)
    pred = _labeled(study, kept)
    gt = _gt_labeled(study)

    scored: dict[float, list[tuple[float, bool]]] = {}
    for thr in iou_thresholds:
        match = match_detections(pred, gt, thr, class_aware=True)
        scored[thr] = [
            (pred[i].confidence, match.statuses[i] == "TP") for i in range(len(pred))
        ]

    identity = match_detections(pred, gt, IDENTITY_IOU, class_aware=True)
    iou = per_image_iou(
        [p.mask for p in pred], [g.mask for g in gt], list(identity.matched_gt)
    )
    return DetectionRecord(
        n_gt=len(gt),
        scored=scored,
        tp=identity.tp,
        fn=identity.fn,
        fp=identity.fp,
        image_iou=iou,
    )


@dataclass
class DetectionMetrics:
    """Aggregate metrics with per-study standard errors."""

    ap: dict[float, float]
    ap_stderr: dict[float, float]
    da: float
    da_stderr: float
    fa: float
    fa_stderr: float
    mean_iou: float
    iou_stderr: float
    n_studies: int

    def rows(self) -> list[tuple[str, float, float]]:
        out = [(f"AP@IoU={t:g}", self.ap[t], self.ap_stderr[t]) for t in sorted(self.ap)]
        out.append(("DA", self.da, self.da_stderr))
        out.append(("FA", self.fa, self.fa_stderr))
        out.append(("per-image IoU", self.mean_iou, self.iou_stderr))
        return out


def _stderr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def aggregate_detection_metrics(
    records: Sequence[DetectionRecord], iou_thresholds: Sequence[float]
) -> DetectionMetrics:
    """Pool study records: headline values over the pooled dataset, standard
    errors from the spread of per-study values."""
    if not records:
        raise ValueError("no studies to aggregate")
    ap: dict[float, float] = {}
    ap_se: dict[float, float] = {}
    for thr in iou_thresholds:
        pooled = []
        for img, rec in enumerate(records):
            pooled.extend(
                (conf, img, i, hit) for i, (conf, hit) in enumerate(rec.scored[thr])
            )
        total_gt = sum(rec.n_gt for rec in records)
        ap[thr] = ap_from_scored(pooled, total_gt)
        per_study = [
            ap_from_scored(
                [(conf, 0, i, hit) for i, (conf, hit) in enumerate(rec.scored[thr])],
                rec.n_gt,
            )
            for rec in records
            if rec.n_gt
        ]
        ap_se[thr] = _stderr(per_study)

    tp = sum(r.tp for r in records)
    fn = sum(r.fn for r in records)
    fp = sum(r.fp for r in records)
    da, fa = da_fa_counts(tp, fn, fp)
    per_da, per_fa = [], []
    for r in records:
        if r.tp + r.fn + r.fp:
            d, f = da_fa_counts(r.tp, r.fn, r.fp)
            per_da.append(d)
            per_fa.append(f)
    ious = [r.image_iou for r in records]
    return DetectionMetrics(
        ap=ap,
        ap_stderr=ap_se,
        da=da,
        da_stderr=_stderr(per_da),
        fa=fa,
        fa_stderr=_stderr(per_fa),
        mean_iou=float(np.mean(ious)),
        iou_stderr=_stderr(ious),
        n_studies=len(records),
    )


def pr_staircase(
    records: Sequence[DetectionRecord], iou_threshold: float
) -> tuple[list[float], list[float]]:
    """Pooled precision-recall points (raw staircase, not the envelope)."""
    pooled = []
    for img, rec in enumerate(records):
        pooled.extend((conf, img, i, hit) for i, (conf, hit) in enumerate(rec.scored[iou_threshold]))
    total_gt = sum(rec.n_gt for rec in records)
    pooled.sort(key=lambda t: (-t[0], t[1], t[2]))
    tps = np.cumsum([1 if hit else 0 for *_k, hit in pooled])
    fps = np.cumsum([0 if hit else 1 for *_k, hit in pooled])
    recall = (tps / total_gt).tolist() if total_gt else []
    precision = (tps / np.maximum(tps + fps, 1)).tolist()
    return [0.0] + recall, [1.0] + precision


def summarize_with_decode(
    study: Study, decoder_config: DecoderConfig | None = None
) -> tuple[FindingSummary, StudyDecodeResult]:
    """Decode a study and assemble its finding summary."""
    if study.segmentation is None:
        raise ValueError("summarization requires a segmentation map")
    decode = decode_study(study.detections, decoder_config)
    return summarize_study(study.segmentation, decode, study.detections), decode
