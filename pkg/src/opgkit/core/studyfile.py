"""Study document I/O.

A *study file* is a single JSON document holding the image dimensions, the
detections under test, and optional segmentation-map / weak-label /
ground-truth blocks. The exact layout is documented in the repository README
(Formats section); loaders here reject schema violations with the offending
file and field named rather than coercing silently.

The segmentation map lives in a sidecar bitmap file referenced by relative
path: a header of two little-endian unsigned 32-bit integers (width, then
height) followed by ``width * height`` bytes, one class label per pixel in
row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .masks import BinaryMask
from .types import C_DET, N_TEETH, DentitionLabel, Detection, SegmentationMap

N_FINDINGS = 6
FINDING_NAMES = ("missing", "impacted", "crown_bridge", "restoration", "root_filled", "implant")

FORMAT_VERSION = 1
SEG_HEADER = struct.Struct("<II")


class StudyFormatError(ValueError):
    """A study document violated the schema; names the file and field."""

    def __init__(self, path: str | Path, field: str, message: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{self.path}: field '{field}': {message}")


@dataclass
class GroundTruth:
    """Reference block of a study: true detections and labels."""

    detections: list[Detection]
    # Detection-space class of each ground-truth object (1..32 teeth, 33 implant).
    classes: list[int]
    # Detection-space class of each *corrupted* detection, parallel to
    # Study.detections; None when unknown.
    true_classes: list[int] | None = None
    # 32 x 6 binary finding labels, rows in FDI slot order, columns in
    # FINDING_NAMES order; None when not annotated.
    findings: np.ndarray | None = None


@dataclass
class Study:
    """In-memory form of one study file."""

    width: int
    height: int
    detections: list[Detection]
    segmentation: SegmentationMap | None = None
    dentition_label: DentitionLabel | None = None
    ground_truth: GroundTruth | None = None


# -- segmentation bitmap ------------------------------------------------------


def save_segmentation(seg: SegmentationMap, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(SEG_HEADER.pack(seg.width, seg.height))
        fh.write(np.ascontiguousarray(seg.labels, dtype=np.uint8).tobytes())


def load_segmentation(path: str | Path) -> SegmentationMap:
    raw = Path(path).read_bytes()
    if len(raw) < SEG_HEADER.size:
        raise StudyFormatError(path, "header", "segmentation file shorter than its header")
    width, height = SEG_HEADER.unpack_from(raw)
    expected = SEG_HEADER.size + width * height
    if len(raw) != expected:
        raise StudyFormatError(
            path, "pixels", f"expected {expected} bytes for {width}x{height}, got {len(raw)}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=SEG_HEADER.size)
    try:
        return SegmentationMap(labels.reshape(height, width))
    except ValueError as exc:
        raise StudyFormatError(path, "pixels", str(exc)) from exc


# -- JSON helpers -------------------------------------------------------------


def _mask_to_json(mask: BinaryMask, raw_bits: bool) -> dict:
    if raw_bits:
        bits = "".join("1" if b else "0" for b in mask.bits.ravel())
        return {"width": mask.width, "height": mask.height, "bits": bits}
    return mask.to_rle()


def _mask_from_json(obj: Any, path: str | Path, field: str) -> BinaryMask:
    if not isinstance(obj, dict):
        raise StudyFormatError(path, field, "mask must be an object")
    for key in ("width", "height"):
        if not isinstance(obj.get(key), int) or obj[key] <= 0:
            raise StudyFormatError(path, f"{field}.{key}", "must be a positive integer")
    try:
        if "bits" in obj:
            bits = obj["bits"]
            if not isinstance(bits, str) or len(bits) != obj["width"] * obj["height"]:
                raise ValueError("bits string length must equal width * height")
            if set(bits) - {"0", "1"}:
                raise ValueError("bits string must contain only '0' and '1'")
            flat = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")
            return BinaryMask(flat.reshape(obj["height"], obj["width"]))
        if "counts" in obj:
            return BinaryMask.from_rle(obj)
    except ValueError as exc:
        raise StudyFormatError(path, field, str(exc)) from exc
    raise StudyFormatError(path, field, "mask needs either 'counts' (RLE) or 'bits'")


def _detection_to_json(det: Detection, raw_bits: bool) -> dict:
    out: dict[str, Any] = {
        "probs": det.probs.tolist(),
        "box": list(det.box),
    }
    if det.shared_mask:
        out["mask"] = _mask_to_json(det.masks[0], raw_bits)
    else:
        out["masks"] = [_mask_to_json(m, raw_bits) for m in det.masks]
    return out


def _detection_from_json(obj: Any, path: str | Path, field: str) -> Detection:
    if not isinstance(obj, dict):
        raise StudyFormatError(path, field, "detection must be an object")
    probs = obj.get("probs")
    if not isinstance(probs, list) or len(probs) != C_DET:
        raise StudyFormatError(path, f"{field}.probs", f"must be a list of {C_DET} numbers")
    box = obj.get("box")
    if not isinstance(box, list) or len(box) != 4:
        raise StudyFormatError(path, f"{field}.box", "must be [x0, y0, x1, y1]")
    if "mask" in obj and "masks" in obj:
        raise StudyFormatError(path, field, "'mask' and 'masks' are mutually exclusive")
    if "mask" in obj:
        masks: BinaryMask | list[BinaryMask] = _mask_from_json(obj["mask"], path, f"{field}.mask")
    elif "masks" in obj:
        raw = obj["masks"]
        if not isinstance(raw, list) or len(raw) != C_DET:
            raise StudyFormatError(path, f"{field}.masks", f"must be a list of {C_DET} masks")
        masks = [_mask_from_json(m, path, f"{field}.masks[{i}]") for i, m in enumerate(raw)]
    else:
        raise StudyFormatError(path, field, "detection needs 'mask' or 'masks'")
    try:
        return Detection(probs, tuple(box), masks)
    except ValueError as exc:
        raise StudyFormatError(path, field, str(exc)) from exc


def _findings_to_json(findings: np.ndarray) -> list[list[int]]:
    return [[int(v) for v in row] for row in findings]


def _findings_from_json(obj: Any, path: str | Path, field: str) -> np.ndarray:
    if (
        not isinstance(obj, list)
        or len(obj) != N_TEETH
        or any(not isinstance(r, list) or len(r) != N_FINDINGS for r in obj)
    ):
        raise StudyFormatError(path, field, f"must be a {N_TEETH}x{N_FINDINGS} matrix of 0/1")
    arr = np.asarray(obj)
    if not np.isin(arr, (0, 1)).all():
        raise StudyFormatError(path, field, "entries must be 0 or 1")
    return arr.astype(bool)


# -- top-level save / load ----------------------------------------------------


def save_study(
    study: Study,
    path: str | Path,
    *,
    raw_bits: bool = False,
    segmentation_name: str | None = None,
) -> None:
    """Write a study document (and the segmentation sidecar, if present).

    The sidecar is named ``<stem>.seg`` next to the study file unless
    ``segmentation_name`` overrides it. Serialization is canonical (sorted
    keys, fixed separators), so identical studies produce identical bytes.
    """
    path = Path(path)
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "width": study.width,
        "height": study.height,
        "detections": [_detection_to_json(d, raw_bits) for d in study.detections],
    }
    if study.segmentation is not None:
        name = segmentation_name or (path.stem + ".seg")
        save_segmentation(study.segmentation, path.parent / name)
        doc["segmentation_file"] = name
    if study.dentition_label is not None:
        doc["dentition_label"] = {
            "present": [int(b) for b in study.dentition_label.present],
            "implant_count": study.dentition_label.implant_count,
        }
    if study.ground_truth is not None:
        gt = study.ground_truth
        gt_doc: dict[str, Any] = {
            "detections": [_detection_to_json(d, raw_bits) for d in gt.detections],
            "classes": list(gt.classes),
        }
        if gt.true_classes is not None:
            gt_doc["true_classes"] = list(gt.true_classes)
        if gt.findings is not None:
            gt_doc["findings"] = _findings_to_json(gt.findings)
        doc["ground_truth"] = gt_doc
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_study(path: str | Path) -> Study:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"study file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StudyFormatError(path, "<document>", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StudyFormatError(path, "<document>", "top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise StudyFormatError(
            path, "format_version", f"expected {FORMAT_VERSION}, got {doc.get('format_version')!r}"
        )
    for key in ("width", "height"):
        if not isinstance(doc.get(key), int) or doc[key] <= 0:
            raise StudyFormatError(path, key, "must be a positive integer")
    width, height = doc["width"], doc["height"]

    raw_dets = doc.get("detections")
    if not isinstance(raw_dets, list):
        raise StudyFormatError(path, "detections", "must be a list")
    detections = [
        _detection_from_json(d, path, f"detections[{i}]") for i, d in enumerate(raw_dets)
    ]
    _check_dimensions(detections, width, height, path, "detections")

    segmentation = None
    if doc.get("segmentation_file") is not None:
        name = doc["segmentation_file"]
        if not isinstance(name, str):
            raise StudyFormatError(path, "segmentation_file", "must be a string path")
        seg_path = path.parent / name
        if not seg_path.exists():
            raise FileNotFoundError(f"segmentation file not found: {seg_path}")
        segmentation = load_segmentation(seg_path)
        if (segmentation.width, segmentation.height) != (width, height):
            raise StudyFormatError(
                path,
                "segmentation_file",
                f"segmentation is {segmentation.width}x{segmentation.height}, "
                f"study is {width}x{height}",
            )

    label = None
    if doc.get("dentition_label") is not None:
        raw = doc["dentition_label"]
        if not isinstance(raw, dict):
            raise StudyFormatError(path, "dentition_label", "must be an object")
        present = raw.get("present")
        if not isinstance(present, list) or len(present) != N_TEETH:
            raise StudyFormatError(
                path, "dentition_label.present", f"must be a list of {N_TEETH} flags"
            )
        count = raw.get("implant_count", 0)
        if not isinstance(count, int) or count < 0:
            raise StudyFormatError(
                path, "dentition_label.implant_count", "must be a non-negative integer"
            )
        label = DentitionLabel(tuple(bool(v) for v in present), count)

    ground_truth = None
    if doc.get("ground_truth") is not None:
        raw = doc["ground_truth"]
        if not isinstance(raw, dict):
            raise StudyFormatError(path, "ground_truth", "must be an object")
        raw_gt_dets = raw.get("detections")
        if not isinstance(raw_gt_dets, list):
            raise StudyFormatError(path, "ground_truth.detections", "must be a list")
        gt_dets = [
            _detection_from_json(d, path, f"ground_truth.detections[{i}]")
            for i, d in enumerate(raw_gt_dets)
        ]
        _check_dimensions(gt_dets, width, height, path, "ground_truth.detections")
        classes = raw.get("classes")
        if (
            not isinstance(classes, list)
            or len(classes) != len(gt_dets)
            or any(not isinstance(c, int) or not 1 <= c < C_DET for c in classes)
        ):
            raise StudyFormatError(
                path,
                "ground_truth.classes",
                "must list one class in [1, 33] per ground-truth detection",
            )
        true_classes = None
        if raw.get("true_classes") is not None:
            true_classes = raw["true_classes"]
            if (
                not isinstance(true_classes, list)
                or len(true_classes) != len(detections)
                or any(not isinstance(c, int) or not 1 <= c < C_DET for c in true_classes)
            ):
                raise StudyFormatError(
                    path,
                    "ground_truth.true_classes",
                    "must list one class in [1, 33] per detection",
                )
            true_classes = list(true_classes)
        findings = None
        if raw.get("findings") is not None:
            findings = _findings_from_json(raw["findings"], path, "ground_truth.findings")
        ground_truth = GroundTruth(gt_dets, list(classes), true_classes, findings)

    return Study(width, height, detections, segmentation, label, ground_truth)


def _check_dimensions(
    detections: Sequence[Detection], width: int, height: int, path: Path, field: str
) -> None:
    for i, det in enumerate(detections):
        if (det.width, det.height) != (width, height):
            raise StudyFormatError(
                path,
                f"{field}[{i}]",
                f"mask is {det.width}x{det.height}, study is {width}x{height}",
            )
