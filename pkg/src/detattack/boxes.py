"""Box geometry, NMS and detection matching shared by models, attacks and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import InvalidBoxError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"degenerate box w={self.w} h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def clip(self, width: float, height: float) -> "BoundingBox":
        x1, y1, x2, y2 = self.corners
        return BoundingBox.from_corners(
            min(max(x1, 0.0), width),
            min(max(y1, 0.0), height),
            min(max(x2, 0.0), width),
            min(max(y2, 0.0), height),
        )

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(self.cx * sx, self.cy * sy, self.w * sx, self.h * sy)

    def within(self, width: float, height: float, tol: float = 1e-6) -> bool:
        x1, y1, x2, y2 = self.corners
        return x1 >= -tol and y1 >= -tol and x2 <= width + tol and y2 <= height + tol


@dataclass(frozen=True)
class DetectionCandidate:
    """Raw detector output for one grid cell or proposal."""

    box: BoundingBox
    objectness: float
    class_probs: tuple

    def __post_init__(self):
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")
        probs = np.asarray(self.class_probs, dtype=float)
        if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("class_probs must be a nonnegative vector summing to 1")

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_probs))

    @property
    def confidence(self) -> float:
        # objectness x max class probability
        return float(self.objectness * max(self.class_probs))


@dataclass(frozen=True)
class DetectedObject:
    box: BoundingBox
    class_id: int
    confidence: float
    class_probs: Optional[tuple] = field(default=None, compare=False)


@dataclass(frozen=True)
class GroundTruthObject:
    box: BoundingBox
    class_id: int


def _check(box: BoundingBox):
    if not (box.w > 0 and box.h > 0):
        raise InvalidBoxError(f"degenerate box {box}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes."""
    _check(a)
    _check(b)
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def corners_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    arr = np.array([b.corners for b in boxes], dtype=float)
    return arr.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IOU between two (N, 4) and (M, 4) corner arrays."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def nms(candidates: Sequence, iou_threshold: float = 0.5, confidence_threshold: float = 0.5) -> List[DetectedObject]:
    """Per-class greedy non-maximum suppression.

    Accepts DetectionCandidate or DetectedObject items. Candidates below
    ``confidence_threshold`` are dropped first; the survivors are visited by
    descending confidence (ties by input index) and kept unless a kept box of
    the same class overlaps with IOU >= ``iou_threshold``.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must be in (0, 1]")
    if not 0 <= confidence_threshold <= 1:
        raise ValueError("confidence_threshold must be in [0, 1]")
    items = [(i, c) for i, c in enumerate(candidates) if c.confidence >= confidence_threshold]
    if not items:
        return []
    items.sort(key=lambda ic: (-ic[1].confidence, ic[0]))
    corners = corners_array(c.box for _, c in items)
    ious = iou_matrix(corners, corners)
    classes = np.array([c.class_id for _, c in items])
    keep: list[int] = []
    for k in range(len(items)):
        same = [j for j in keep if classes[j] == classes[k]]
        if same and np.max(ious[k, same]) >= iou_threshold:
            continue
        keep.append(k)
    out = []
    for k in keep:
        c = items[k][1]
        if isinstance(c, DetectedObject):
            out.append(c)
        else:
            out.append(DetectedObject(c.box, c.class_id, c.confidence, tuple(c.class_probs)))
    return out


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: Optional[int]
    iou: float
    class_b: Optional[int]

    @property
    def matched(self) -> bool:
        return self.index_b is not None


def match_detections(set_a: Sequence, set_b: Sequence, t_iou: float = 0.5, one_to_one: bool = False) -> List[Match]:
    """Match every object of ``set_a`` against ``set_b``.

    In existence mode (default) each element of ``set_a`` is paired with its
    best-overlapping element of ``set_b`` and several ``set_a`` objects may
    share a partner. With ``one_to_one`` the ``set_a`` objects are visited in
    order and each claims the best still-unclaimed partner. A pair counts
    only when IOU >= ``t_iou``. Results are returned in ``set_a`` order.
    """
    if not 0 < t_iou <= 1:
        raise ValueError("t_iou must be in (0, 1]")
    ious = iou_matrix(corners_array(o.box for o in set_a), corners_array(o.box for o in set_b))
    taken = np.zeros(len(set_b), dtype=bool)
    matches = []
    for i in range(len(set_a)):
        row = ious[i].copy() if len(set_b) else np.zeros(0)
        if one_to_one:
            row[taken] = -1.0
        if len(row) and row.max() >= t_iou:
            j = int(np.argmax(row))
            if one_to_one:
                taken[j] = True
            matches.append(Match(i, j, float(ious[i, j]), set_b[j].class_id))
        else:
            matches.append(Match(i, None, max(0.0, float(row.max())) if len(row) else 0.0, None))
    return matches
