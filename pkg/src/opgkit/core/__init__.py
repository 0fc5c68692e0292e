"""Domain types, mask arithmetic, and study-file I/O."""

from .masks import BinaryMask, MaskShapeError, intersection_area, mask_from_rows, mask_iou
from .studyfile import (
    FINDING_NAMES,
    N_FINDINGS,
    GroundTruth,
    Study,
    StudyFormatError,
    load_segmentation,
    load_study,
    save_segmentation,
    save_study,
)
from .types import (
    BACKGROUND_CLASS,
    C_DET,
    C_SEG,
    FDI_NUMBERS,
    IMPLANT_CLASS,
    LOWER_SLOTS,
    N_TEETH,
    SEG_CLASS_NAMES,
    UPPER_SLOTS,
    Assignment,
    DentitionLabel,
    Detection,
    OverlapTensor,
    SegmentationMap,
    build_overlap_tensor,
    detection_class_for_slot,
    fdi_for_slot,
    slot_for_detection_class,
    slot_for_fdi,
)

__all__ = [
    "Assignment",
    "BACKGROUND_CLASS",
    "BinaryMask",
    "C_DET",
    "C_SEG",
    "DentitionLabel",
    "Detection",
    "FDI_NUMBERS",
    "FINDING_NAMES",
    "GroundTruth",
    "IMPLANT_CLASS",
    "LOWER_SLOTS",
    "MaskShapeError",
    "N_FINDINGS",
    "N_TEETH",
    "OverlapTensor",
    "SEG_CLASS_NAMES",
    "SegmentationMap",
    "Study",
    "StudyFormatError",
    "UPPER_SLOTS",
    "build_overlap_tensor",
    "detection_class_for_slot",
    "fdi_for_slot",
    "intersection_area",
    "load_segmentation",
    "load_study",
    "mask_from_rows",
    "mask_iou",
    "save_segmentation",
    "save_study",
    "slot_for_detection_class",
    "slot_for_fdi",
]
