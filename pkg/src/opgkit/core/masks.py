"""Binary masks, run-length encoding, and mask IoU."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class MaskShapeError(ValueError):
    """Two masks (or a mask and a map) with different dimensions were combined."""


class BinaryMask:
    """Immutable row-major bitmap of per-pixel presence flags.

    The pixel array is frozen at construction; all operations return new
    masks, so instances are safe to share across threads.
    """

    __slots__ = ("_bits", "_area", "_bbox")

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask dimensions must be positive, got {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._bits = arr
        self._area = int(arr.sum())
        self._bbox: tuple[int, int, int, int] | None = None

    @property
    def bits(self) -> np.ndarray:
        """Read-only (height, width) boolean array."""
        return self._bits

    @property
    def height(self) -> int:
        return self._bits.shape[0]

    @property
    def width(self) -> int:
        return self._bits.shape[1]

    @property
    def area(self) -> int:
        """Number of set pixels."""
        return self._area

    @property
    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight (x0, y0, x1, y1) bounds of set pixels, exclusive on the
        right/bottom; None for an empty mask."""
        if self._area == 0:
            return None
        if self._bbox is None:
            rows = np.flatnonzero(self._bits.any(axis=1))
            cols = np.flatnonzero(self._bits.any(axis=0))
            self._bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        return self._bbox

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self._bits.shape == other._bits.shape and bool(
            np.array_equal(self._bits, other._bits)
        )

    def __hash__(self):  # pragma: no cover - masks are not meant to be dict keys
        return hash((self._bits.shape, self._bits.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    def shifted(self, dx: int, dy: int) -> "BinaryMask":
        """Mask translated by (dx, dy); pixels pushed past the border are lost."""
        out = np.zeros_like(self._bits)
        h, w = self._bits.shape
        src_y = slice(max(0, -dy), min(h, h - dy))
        src_x = slice(max(0, -dx), min(w, w - dx))
        dst_y = slice(max(0, dy), min(h, h + dy))
        dst_x = slice(max(0, dx), min(w, w + dx))
        if src_y.start < src_y.stop and src_x.start < src_x.stop:
            out[dst_y, dst_x] = self._bits[src_y, src_x]
        return BinaryMask(out)

    # -- run-length encoding ------------------------------------------------

    def to_rle(self) -> dict:
        """Encode as alternating run lengths over the row-major flattened
        bitmap, starting with the length of the leading 0-run (possibly 0)."""
        flat = self._bits.ravel()
        if flat.size == 0:
            counts: list[int] = []
        else:
            change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
            bounds = np.concatenate(([0], change, [flat.size]))
            counts = np.diff(bounds).tolist()
            if flat[0]:
                counts.insert(0, 0)
        return {"width": self.width, "height": self.height, "counts": counts}

    @classmethod
    def from_rle(cls, rle: dict) -> "BinaryMask":
        width = int(rle["width"])
        height = int(rle["height"])
        counts = np.asarray(rle["counts"], dtype=np.int64)
        if counts.size and counts.min() < 0:
            raise ValueError("RLE counts must be non-negative")
        total = int(counts.sum())
        if total != width * height:
            raise ValueError(
                f"RLE counts sum to {total}, expected {width * height} "
                f"for a {width}x{height} mask"
            )
        values = np.arange(counts.size, dtype=np.int64) % 2 == 1
        flat = np.repeat(values, counts)
        return cls(flat.reshape(height, width))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two equally sized masks.

    Two empty masks have IoU 0 by convention, so degenerate detections never
    look like perfect matches.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise MaskShapeError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if a.area == 0 or b.area == 0:
        return 0.0
    ba, bb = a.bbox, b.bbox
    x0, y0 = max(ba[0], bb[0]), max(ba[1], bb[1])
    x1, y1 = min(ba[2], bb[2]), min(ba[3], bb[3])
    if x0 >= x1 or y0 >= y1:
        return 0.0
    inter = int(np.count_nonzero(a.bits[y0:y1, x0:x1] & b.bits[y0:y1, x0:x1]))
    union = a.area + b.area - inter
    return inter / union


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    """Pixel count of the overlap of two equally sized masks."""
    if (a.height, a.width) != (b.height, b.width):
        raise MaskShapeError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if a.area == 0 or b.area == 0:
        return 0
    ba, bb = a.bbox, b.bbox
    x0, y0 = max(ba[0], bb[0]), max(ba[1], bb[1])
    x1, y1 = min(ba[2], bb[2]), min(ba[3], bb[3])
    if x0 >= x1 or y0 >= y1:
        return 0
    return int(np.count_nonzero(a.bits[y0:y1, x0:x1] & b.bits[y0:y1, x0:x1]))


def mask_from_rows(rows: Sequence[Sequence[int]]) -> BinaryMask:
    """Convenience constructor from nested 0/1 lists (used heavily in tests)."""
    return BinaryMask(np.asarray(rows, dtype=bool))
