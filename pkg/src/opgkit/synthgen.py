"""Seeded synthetic study generator.

Lays 32 tooth slots as ellipses on two parabolic arches, removes missing
teeth, optionally replaces them with implants, paints finding regions into
the functional segmentation map, and emits corrupted detections as the
"model output" under test.

Geometry guarantees the separability every downstream check relies on:
neighboring teeth overlap only slightly (pairwise IoU stays far below the
matching thresholds) and each painted finding region occupies a fraction of
its tooth comfortably above that finding's default operating threshold.

Corruption draws are stream-aligned: the same seed produces the same base
study for every knob setting, and raising a knob only strengthens the
corruption (higher jitter scales the same offsets, a higher duplicate rate
inserts a superset of duplicates), so degradation sweeps are monotone
study-by-study.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.masks import BinaryMask
from .core.studyfile import GroundTruth, Study, save_study
from .core.types import (
    C_DET,
    IMPLANT_CLASS,
    N_TEETH,
    DentitionLabel,
    Detection,
    SegmentationMap,
)
from .summary import THRESHOLD_PROFILES

# Painted fractions must clear the default operating thresholds by at least
# this margin for every finding-positive tooth.
_FRACTION_MARGIN = 0.01

# Slot distance scaling for the label-confusion model; smaller values make
# neighbor confusions more likely at a given temperature.
_NEIGHBOR_DISTANCE = 0.55
_ANTAGONIST_DISTANCE = 2.0
_FAR_DISTANCE = 4.0
_NON_TOOTH_DISTANCE = 5.0


@dataclass(frozen=True)
class GenConfig:
    """Study-generation knobs; all randomness hangs off ``rng_seed``."""

    width: int = 512
    height: int = 256
    missing_prob: float = 0.15
    implant_prob: float = 0.3  # per missing slot
    impacted_prob: float = 0.08
    crown_bridge_prob: float = 0.10
    restoration_prob: float = 0.12
    root_filled_prob: float = 0.10
    duplicate_rate: float = 0.0
    label_temperature: float = 0.0
    mask_jitter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in (
            "missing_prob",
            "implant_prob",
            "impacted_prob",
            "crown_bridge_prob",
            "restoration_prob",
            "root_filled_prob",
            "duplicate_rate",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.label_temperature < 0:
            raise ValueError("label_temperature must be non-negative")
        if self.mask_jitter < 0:
            raise ValueError("mask_jitter must be non-negative")
        if self.width < 160 or self.height < 96:
            raise ValueError(
                f"image {self.width}x{self.height} too small to fit 32 tooth slots"
            )


@dataclass
class SyntheticStudy:
    """Ground truth plus corrupted detections for one synthetic image."""

    width: int
    height: int
    gt_detections: list[Detection]
    gt_classes: list[int]  # detection-space class per ground-truth object
    segmentation: SegmentationMap
    dentition_label: DentitionLabel
    gt_findings: np.ndarray  # (32, 6) bool
    detections: list[Detection]  # corrupted "model output"
    true_classes: list[int]  # detection-space class per corrupted detection

    def to_study(self) -> Study:
        return Study(
            width=self.width,
            height=self.height,
            detections=self.detections,
            segmentation=self.segmentation,
            dentition_label=self.dentition_label,
            ground_truth=GroundTruth(
                detections=self.gt_detections,
                classes=self.gt_classes,
                true_classes=self.true_classes,
                findings=self.gt_findings,
            ),
        )


@dataclass(frozen=True)
class _Slot:
    index: int
    cx: float
    cy: float
    rx: float
    ry: float
    upper: bool


def _slot_geometry(width: int, height: int) -> list[_Slot]:
    margin = 0.04 * width
    span = width - 2 * margin
    spacing = span / 16.0
    rx = 0.55 * spacing
    ry = 0.115 * height
    slots = []
    for i in range(N_TEETH):
        upper = i < 16
        k = i if upper else i - 16
        u = (k + 0.5) / 16.0
        cx = margin + u * span
        bow = 0.10 * height * (2.0 * u - 1.0) ** 2
        cy = 0.24 * height + bow if upper else 0.76 * height - bow
        slots.append(_Slot(i, cx, cy, rx, ry, upper))
    return slots


def _ellipse_mask(width: int, height: int, cx: float, cy: float, rx: float, ry: float) -> BinaryMask:
    x0 = max(0, int(np.floor(cx - rx)))
    x1 = min(width, int(np.ceil(cx + rx)) + 1)
    y0 = max(0, int(np.floor(cy - ry)))
    y1 = min(height, int(np.ceil(cy + ry)) + 1)
    ys = (np.arange(y0, y1) - cy) / ry
    xs = (np.arange(x0, x1) - cx) / rx
    patch = ys[:, None] ** 2 + xs[None, :] ** 2 <= 1.0
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = patch
    return BinaryMask(bits)


def _box_of(mask: BinaryMask) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = mask.bbox
    return float(x0), float(y0), float(x1), float(y1)


def _one_hot(class_id: int) -> np.ndarray:
    p = np.zeros(C_DET)
    p[class_id] = 1.0
    return p


def _class_distances(true_class: int) -> np.ndarray:
    """Confusion distances over all detection classes for one true class.

    Neighboring slots on the same arch are the closest confusions, the same
    position on the opposing arch is a moderate one, everything else
    (including background and implant) is remote.
    """
    d = np.full(C_DET, _FAR_DISTANCE)
    d[0] = _NON_TOOTH_DISTANCE
    d[IMPLANT_CLASS] = _NON_TOOTH_DISTANCE
    if true_class == IMPLANT_CLASS:
        d[IMPLANT_CLASS] = 0.0
        return d
    slot = true_class - 1
    arch_base = 0 if slot < 16 else 16
    pos = slot - arch_base
    for other in range(16):
        dist = _NEIGHBOR_DISTANCE * abs(other - pos)
        d[arch_base + other + 1] = min(d[arch_base + other + 1], dist) if dist > 0 else 0.0
    antagonist = (slot + 16) % 32
    d[antagonist + 1] = _ANTAGONIST_DISTANCE
    d[true_class] = 0.0
    return d


def _corrupt_probs(
    true_class: int, temperature: float, gumbel: np.ndarray, extra_distance: float = 0.0
) -> np.ndarray:
    """Softmax over noisy class scores; exactly one-hot at zero temperature.

    ``extra_distance`` handicaps the true class (used for duplicate
    detections so they rank below their original)."""
    if temperature <= 0.0:
        if extra_distance <= 0.0:
            return _one_hot(true_class)
        p = np.full(C_DET, 0.1 / (C_DET - 1))
        p[true_class] = 0.9
        return p
    d = _class_distances(true_class)
    d = d.copy()
    d[true_class] += extra_distance
    logits = -d / temperature + gumbel
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def _jitter_shift(
    mask: BinaryMask, jitter: float, draw: np.ndarray, width: int, height: int
) -> BinaryMask:
    if jitter <= 0.0:
        return mask
    dx = int(round(jitter * draw[0]))
    dy = int(round(jitter * draw[1]))
    x0, y0, x1, y1 = mask.bbox
    dx = max(-x0, min(dx, width - x1))
    dy = max(-y0, min(dy, height - y1))
    if dx == 0 and dy == 0:
        return mask
    return mask.shifted(dx, dy)


def generate_study(config: GenConfig, rng: np.random.Generator | None = None) -> SyntheticStudy:
    """One synthetic study; deterministic given (config, rng state)."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    # Independent substreams keep dentition and findings identical across
    # corruption-knob settings of the same seed.
    r_dentition, r_findings, r_probs, r_masks, r_dups = rng.spawn(5)

    width, height = config.width, config.height
    slots = _slot_geometry(width, height)

    missing = r_dentition.random(N_TEETH) < config.missing_prob
    implant_draw = r_dentition.random(N_TEETH)
    has_implant = missing & (implant_draw < config.implant_prob)
    present = ~missing

    finding_draws = r_findings.random((N_TEETH, 4))
    impacted = present & (finding_draws[:, 0] < config.impacted_prob)
    crowned = present & ~impacted & (finding_draws[:, 1] < config.crown_bridge_prob)
    restored = present & ~impacted & (finding_draws[:, 2] < config.restoration_prob)
    root_filled = present & ~impacted & (finding_draws[:, 3] < config.root_filled_prob)

    thresholds = THRESHOLD_PROFILES["table1"]
    labels = np.zeros((height, width), dtype=np.uint8)
    gt_detections: list[Detection] = []
    gt_classes: list[int] = []
    tooth_masks: dict[int, BinaryMask] = {}

    for slot in slots:
        i = slot.index
        if present[i]:
            mask = _ellipse_mask(width, height, slot.cx, slot.cy, slot.rx, slot.ry)
            tooth_masks[i] = mask
            bits = mask.bits
            labels[bits] = 1
            area = mask.area
            ys, xs = np.nonzero(bits)
            if impacted[i]:
                region = bits & (np.arange(height)[:, None] < slot.cy)
                labels[region] = 2
                _require_fraction(region.sum() / area, thresholds[1], "impacted")
            else:
                if crowned[i]:
                    # Occlusal band: the side facing the opposing arch.
                    cut = slot.cy + 0.3 * slot.ry if slot.upper else slot.cy - 0.3 * slot.ry
                    rows = np.arange(height)[:, None]
                    region = bits & (rows >= cut if slot.upper else rows <= cut)
                    labels[region] = 3
                    _require_fraction(region.sum() / area, thresholds[2], "crown_bridge")
                if restored[i]:
                    r = 0.35 * slot.rx
                    yy = (np.arange(height)[:, None] - slot.cy) / r
                    xx = (np.arange(width)[None, :] - slot.cx) / r
                    region = bits & (yy**2 + xx**2 <= 1.0)
                    labels[region] = 4
                    _require_fraction(region.sum() / area, thresholds[3], "restoration")
                if root_filled[i]:
                    # Thin canal strip on the apex half (away from the bite).
                    rows = np.arange(height)[:, None]
                    cols = np.arange(width)[None, :]
                    apex = rows <= slot.cy - 0.25 * slot.ry if slot.upper else (
                        rows >= slot.cy + 0.25 * slot.ry
                    )
                    strip = np.abs(cols - slot.cx) <= max(1.0, 0.14 * slot.rx)
                    region = bits & apex & strip
                    labels[region] = 5
                    _require_fraction(region.sum() / area, thresholds[4], "root_filled")
            gt_detections.append(Detection(_one_hot(i + 1), _box_of(mask), mask))
            gt_classes.append(i + 1)
        elif has_implant[i]:
            mask = _ellipse_mask(width, height, slot.cx, slot.cy, slot.rx * 0.45, slot.ry)
            labels[mask.bits] = 6
            gt_detections.append(Detection(_one_hot(IMPLANT_CLASS), _box_of(mask), mask))
            gt_classes.append(IMPLANT_CLASS)

    segmentation = SegmentationMap(labels)
    dentition = DentitionLabel(tuple(bool(b) for b in present), int(has_implant.sum()))

    findings = np.zeros((N_TEETH, 6), dtype=bool)
    findings[:, 0] = missing
    findings[:, 1] = impacted
    findings[:, 2] = crowned
    findings[:, 3] = restored
    findings[:, 4] = root_filled
    findings[:, 5] = has_implant

    # Corrupted detections. Random draws are consumed for every object and
    # every potential duplicate regardless of the knob values, which keeps
    # studies comparable across corruption sweeps.
    zero_corruption = (
        config.label_temperature <= 0.0
        and config.mask_jitter <= 0.0
        and config.duplicate_rate <= 0.0
    )
    detections: list[Detection] = []
    true_classes: list[int] = []
    for det, class_id in zip(gt_detections, gt_classes):
        gumbel = r_probs.gumbel(size=C_DET)
        shift = r_masks.normal(size=2)
        if zero_corruption:
            detections.append(det)
            true_classes.append(class_id)
        else:
            probs = _corrupt_probs(class_id, config.label_temperature, gumbel)
            mask = _jitter_shift(det.masks[0], config.mask_jitter, shift, width, height)
            detections.append(Detection(probs, _box_of(mask), mask))
            true_classes.append(class_id)
        if class_id == IMPLANT_CLASS:
            continue
        u = r_dups.random()
        dup_gumbel = r_dups.gumbel(size=C_DET)
        dup_dir = int(r_dups.integers(0, 4))
        dup_shift = r_dups.normal(size=2)
        if u < config.duplicate_rate:
            dx, dy = ((1, 0), (-1, 0), (0, 1), (0, -1))[dup_dir]
            base = tooth_masks[class_id - 1]
            bx0, by0, bx1, by1 = base.bbox
            dx = max(-bx0, min(dx, width - bx1))
            dy = max(-by0, min(dy, height - by1))
            dup_mask = _jitter_shift(
                base.shifted(dx, dy), config.mask_jitter, dup_shift, width, height
            )
            dup_probs = _corrupt_probs(
                class_id, config.label_temperature, dup_gumbel, extra_distance=0.15
            )
            detections.append(Detection(dup_probs, _box_of(dup_mask), dup_mask))
            true_classes.append(class_id)

    return SyntheticStudy(
        width=width,
        height=height,
        gt_detections=gt_detections,
        gt_classes=gt_classes,
        segmentation=segmentation,
        dentition_label=dentition,
        gt_findings=findings,
        detections=detections,
        true_classes=true_classes,
    )


def _require_fraction(fraction: float, threshold: float, name: str) -> None:
    if fraction < threshold + _FRACTION_MARGIN:
        raise RuntimeError(
            f"painted {name} region fraction {fraction:.4f} does not clear "
            f"its operating threshold {threshold}; geometry too small"
        )


def generate_batch(
    config: GenConfig, count: int, out_dir: str | Path, raw_masks: bool = False
) -> list[Path]:
    """Write ``count`` studies under ``out_dir`` with per-study child seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, i]))
        study = generate_study(config, rng).to_study()
        path = out / f"study_{i:04d}.json"
        save_study(study, path, raw_bits=raw_masks)
        paths.append(path)
    return paths


def generate_studies(config: GenConfig, count: int) -> list[SyntheticStudy]:
    """In-memory batch with the same per-study seeding as ``generate_batch``."""
    studies = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, i]))
        studies.append(generate_study(config, rng))
    return studies
