"""Domain types: detections, segmentation maps, assignments, overlap cache.

Class index conventions
-----------------------

Detection classes (``C_DET`` = 34): index 0 is background, indices 1..32 are
the 32 permanent teeth in FDI notation, index 33 is the implant class. The
tooth order is fixed so files are portable: upper arch left-to-right
(18, 17, ..., 11, 21, ..., 28) followed by the lower arch left-to-right
(38, 37, ..., 31, 41, ..., 48). Tooth slot ``i`` (0-based, 0..31) therefore
maps to detection class ``i + 1`` and to ``FDI_NUMBERS[i]``.

Segmentation classes (``C_SEG`` = 7): 0 background, 1 normal teeth,
2 impaction, 3 crown & bridge, 4 restoration, 5 root filling material,
6 implant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .masks import BinaryMask, MaskShapeError, mask_iou

C_DET = 34
C_SEG = 7
N_TEETH = 32
BACKGROUND_CLASS = 0
IMPLANT_CLASS = 33

SEG_CLASS_NAMES = (
    "background",
    "normal_teeth",
    "impaction",
    "crown_bridge",
    "restoration",
    "root_filling",
    "implant",
)

# FDI numbers in slot order; slots 0..15 are the upper arch left-to-right,
# slots 16..31 the lower arch left-to-right.
FDI_NUMBERS = (
    18, 17, 16, 15, 14, 13, 12, 11, 21, 22, 23, 24, 25, 26, 27, 28,
    38, 37, 36, 35, 34, 33, 32, 31, 41, 42, 43, 44, 45, 46, 47, 48,
)

_FDI_TO_SLOT = {fdi: i for i, fdi in enumerate(FDI_NUMBERS)}

UPPER_SLOTS = tuple(range(16))
LOWER_SLOTS = tuple(range(16, 32))


def fdi_for_slot(slot: int) -> int:
    return FDI_NUMBERS[slot]


def slot_for_fdi(fdi: int) -> int:
    try:
        return _FDI_TO_SLOT[fdi]
    except KeyError:
        raise ValueError(f"not a permanent-dentition FDI number: {fdi}") from None


def detection_class_for_slot(slot: int) -> int:
    if not 0 <= slot < N_TEETH:
        raise ValueError(f"tooth slot out of range: {slot}")
    return slot + 1


def slot_for_detection_class(class_id: int) -> int:
    if not 1 <= class_id <= N_TEETH:
        raise ValueError(f"detection class {class_id} is not a tooth class")
    return class_id - 1


class SegmentationMap:
    """Per-pixel functional class labels (one of the ``C_SEG`` classes)."""

    __slots__ = ("_labels",)

    def __init__(self, labels: np.ndarray):
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise ValueError(f"segmentation map must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"segmentation dimensions must be positive, got {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= C_SEG):
            raise ValueError(f"segmentation labels must lie in [0, {C_SEG})")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.flags.writeable = False
        self._labels = arr

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def height(self) -> int:
        return self._labels.shape[0]

    @property
    def width(self) -> int:
        return self._labels.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegmentationMap):
            return NotImplemented
        return self._labels.shape == other._labels.shape and bool(
            np.array_equal(self._labels, other._labels)
        )

    def __repr__(self) -> str:
        return f"SegmentationMap({self.width}x{self.height})"


class Detection:
    """One localized object: class probabilities, a box, and mask(s).

    ``masks`` is either a single shared silhouette reused for every class or
    one mask per detection class. Probabilities must form a distribution over
    the 34 detection classes.
    """

    __slots__ = ("_probs", "_box", "_masks")

    def __init__(
        self,
        probs: Sequence[float] | np.ndarray,
        box: tuple[float, float, float, float],
        masks: BinaryMask | Sequence[BinaryMask],
    ):
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (C_DET,):
            raise ValueError(f"probs must have length {C_DET}, got shape {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("probs entries must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probs must sum to 1 within 1e-6, got {p.sum()!r}")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False

        if isinstance(masks, BinaryMask):
            mask_tuple: tuple[BinaryMask, ...] = (masks,)
            shared = True
        else:
            mask_tuple = tuple(masks)
            shared = len(mask_tuple) == 1
            if not shared and len(mask_tuple) != C_DET:
                raise ValueError(
                    f"per-class masks must have {C_DET} entries, got {len(mask_tuple)}"
                )
        if not mask_tuple:
            raise ValueError("a detection needs at least one mask")
        w, h = mask_tuple[0].width, mask_tuple[0].height
        for m in mask_tuple[1:]:
            if (m.width, m.height) != (w, h):
                raise MaskShapeError("all masks of a detection must share dimensions")

        x0, y0, x1, y1 = (float(v) for v in box)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate box: {box}")
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            raise ValueError(f"box {box} lies outside the {w}x{h} image")

        self._probs = p
        self._box = (x0, y0, x1, y1)
        self._masks = mask_tuple

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def box(self) -> tuple[float, float, float, float]:
        return self._box

    @property
    def shared_mask(self) -> bool:
        return len(self._masks) == 1

    @property
    def masks(self) -> tuple[BinaryMask, ...]:
        return self._masks

    def mask_for_class(self, class_id: int) -> BinaryMask:
        if self.shared_mask:
            return self._masks[0]
        return self._masks[class_id]

    @property
    def width(self) -> int:
        return self._masks[0].width

    @property
    def height(self) -> int:
        return self._masks[0].height

    @property
    def argmax_class(self) -> int:
        return int(np.argmax(self._probs))

    @property
    def box_center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self._box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def __repr__(self) -> str:
        return (
            f"Detection(argmax={self.argmax_class}, "
            f"p={self._probs.max():.3f}, box={self._box})"
        )


@dataclass(frozen=True)
class DentitionLabel:
    """Weak supervision: one presence bit per FDI slot plus an implant count."""

    present: tuple[bool, ...]
    implant_count: int = 0

    def __post_init__(self):
        if len(self.present) != N_TEETH:
            raise ValueError(f"present must have {N_TEETH} flags, got {len(self.present)}")
        object.__setattr__(self, "present", tuple(bool(b) for b in self.present))
        if self.implant_count < 0:
            raise ValueError("implant_count must be non-negative")

    def present_slots(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.present) if b)


class Assignment:
    """Binary matrix assigning at most one class per object and at most one
    object per class."""

    __slots__ = ("_entries",)

    def __init__(self, entries: np.ndarray):
        e = np.asarray(entries)
        if e.ndim != 2:
            raise ValueError(f"assignment must be 2-D, got shape {e.shape}")
        if not np.isin(e, (0, 1)).all():
            raise ValueError("assignment entries must be 0 or 1")
        e = np.ascontiguousarray(e, dtype=np.uint8)
        if e.size:
            if int(e.sum(axis=1).max(initial=0)) > 1:
                raise ValueError("an object may receive at most one class")
            if int(e.sum(axis=0).max(initial=0)) > 1:
                raise ValueError("a class may be assigned to at most one object")
        e.flags.writeable = False
        self._entries = e

    @classmethod
    def from_pairs(
        cls, n_objects: int, n_classes: int, pairs: Iterable[tuple[int, int]]
    ) -> "Assignment":
        e = np.zeros((n_objects, n_classes), dtype=np.uint8)
        for n, c in pairs:
            e[n, c] = 1
        return cls(e)

    @classmethod
    def from_row_classes(cls, row_classes: Sequence[int | None], n_classes: int) -> "Assignment":
        e = np.zeros((len(row_classes), n_classes), dtype=np.uint8)
        for n, c in enumerate(row_classes):
            if c is not None:
                e[n, c] = 1
        return cls(e)

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def n_objects(self) -> int:
        return self._entries.shape[0]

    @property
    def n_classes(self) -> int:
        return self._entries.shape[1]

    def assigned_class(self, n: int) -> int | None:
        row = self._entries[n]
        hits = np.flatnonzero(row)
        return int(hits[0]) if hits.size else None

    def row_classes(self) -> list[int | None]:
        return [self.assigned_class(n) for n in range(self.n_objects)]

    def pairs(self) -> Iterator[tuple[int, int]]:
        for n, c in zip(*np.nonzero(self._entries)):
            yield int(n), int(c)

    @property
    def n_assigned(self) -> int:
        return int(self._entries.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Assignment):
            return NotImplemented
        return self._entries.shape == other._entries.shape and bool(
            np.array_equal(self._entries, other._entries)
        )

    def __repr__(self) -> str:
        return f"Assignment({self.n_objects}x{self.n_classes}, assigned={self.n_assigned})"


class OverlapTensor:
    """Cached pairwise mask IoU values q[n, c, m, d].

    Entries are stored per object pair. When both detections use a shared
    mask the value collapses to a single scalar per pair; otherwise a
    (C, C) block is kept. Absent pairs read as 0.
    """

    __slots__ = ("_n_objects", "_n_classes", "_pairs")

    def __init__(self, n_objects: int, n_classes: int):
        self._n_objects = n_objects
        self._n_classes = n_classes
        # (n, m) with n < m -> float or (C, C) ndarray (rows: class of n).
        self._pairs: dict[tuple[int, int], float | np.ndarray] = {}

    @property
    def n_objects(self) -> int:
        return self._n_objects

    @property
    def n_classes(self) -> int:
        return self._n_classes

    def set_pair(self, n: int, m: int, value: float | np.ndarray) -> None:
        if n == m:
            raise ValueError("overlap entries are defined for distinct objects only")
        if n > m:
            n, m = m, n
            if isinstance(value, np.ndarray):
                value = value.T
        if isinstance(value, np.ndarray):
            if value.shape != (self._n_classes, self._n_classes):
                raise ValueError(
                    f"per-class block must be {self._n_classes}x{self._n_classes}"
                )
            if value.min() < 0.0 or value.max() > 1.0:
                raise ValueError("overlap values must lie in [0, 1]")
            value = np.ascontiguousarray(value, dtype=np.float64)
            value.flags.writeable = False
        else:
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError("overlap values must lie in [0, 1]")
        self._pairs[(n, m)] = value

    def get(self, n: int, c: int, m: int, d: int) -> float:
        if n == m:
            raise ValueError("overlap entries are defined for distinct objects only")
        if n > m:
            n, m, c, d = m, n, d, c
        v = self._pairs.get((n, m))
        if v is None:
            return 0.0
        if isinstance(v, np.ndarray):
            return float(v[c, d])
        return v

    def pair_items(self) -> Iterator[tuple[int, int, float | np.ndarray]]:
        for (n, m), v in sorted(self._pairs.items()):
            yield n, m, v

    def linked_objects(self, n: int) -> set[int]:
        """Objects sharing any nonzero overlap entry with object ``n``."""
        out: set[int] = set()
        for (a, b), v in self._pairs.items():
            if a != n and b != n:
                continue
            nonzero = bool(v.max() > 0.0) if isinstance(v, np.ndarray) else v > 0.0
            if nonzero:
                out.add(b if a == n else a)
        return out

    def to_dense(self) -> np.ndarray:
        """(N, C, N, C) array; convenient for brute-force evaluation."""
        n, c = self._n_objects, self._n_classes
        q = np.zeros((n, c, n, c), dtype=np.float64)
        for (a, b), v in self._pairs.items():
            if isinstance(v, np.ndarray):
                q[a, :, b, :] = v
                q[b, :, a, :] = v.T
            else:
                q[a, :, b, :] = v
                q[b, :, a, :] = v
        return q

    @classmethod
    def from_dense(cls, q: np.ndarray) -> "OverlapTensor":
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 4 or q.shape[0] != q.shape[2] or q.shape[1] != q.shape[3]:
            raise ValueError(f"expected shape (N, C, N, C), got {q.shape}")
        if q.size and (q.min() < 0.0 or q.max() > 1.0):
            raise ValueError("overlap values must lie in [0, 1]")
        if not np.allclose(q, np.transpose(q, (2, 3, 0, 1)), atol=0.0):
            raise ValueError("overlap tensor must satisfy q[n,c,m,d] == q[m,d,n,c]")
        n, c = q.shape[0], q.shape[1]
        tensor = cls(n, c)
        for a in range(n):
            for b in range(a + 1, n):
                block = q[a, :, b, :]
                if block.any():
                    tensor.set_pair(a, b, block.copy())
        return tensor

    @classmethod
    def from_pair_values(
        cls, n_objects: int, n_classes: int, values: dict[tuple[int, int], float]
    ) -> "OverlapTensor":
        tensor = cls(n_objects, n_classes)
        for (a, b), v in values.items():
            tensor.set_pair(a, b, v)
        return tensor


def build_overlap_tensor(
    detections: Sequence[Detection],
    class_ids: Sequence[int] | None = None,
) -> OverlapTensor:
    """Pairwise mask IoUs for a set of detections.

    ``class_ids`` maps the tensor's class axis to detection class indices;
    it defaults to the 32 tooth classes, which is the space the assignment
    decoder optimizes over. Detections with a shared mask collapse to one
    scalar per object pair.
    """
    if class_ids is None:
        class_ids = [detection_class_for_slot(s) for s in range(N_TEETH)]
    n = len(detections)
    n_classes = len(class_ids)
    if n > 1:
        w, h = detections[0].width, detections[0].height
        for det in detections[1:]:
            if (det.width, det.height) != (w, h):
                raise MaskShapeError("all detections must share mask dimensions")
    tensor = OverlapTensor(n, n_classes)
    for a in range(n):
        for b in range(a + 1, n):
            da, db = detections[a], detections[b]
            if da.shared_mask and db.shared_mask:
                q = mask_iou(da.mask_for_class(0), db.mask_for_class(0))
                if q > 0.0:
                    tensor.set_pair(a, b, q)
            else:
                block = np.zeros((n_classes, n_classes), dtype=np.float64)
                for i, ci in enumerate(class_ids):
                    ma = da.mask_for_class(ci)
                    for j, cj in enumerate(class_ids):
                        block[i, j] = mask_iou(ma, db.mask_for_class(cj))
                if block.any():
                    tensor.set_pair(a, b, block)
    return tensor
