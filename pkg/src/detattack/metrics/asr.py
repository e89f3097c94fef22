"""Attack success rates and misdetection rate.

Benign and adversarial inputs are per-image lists of DetectedObject aligned
by index. Matching is existence-based: a benign object is covered when any
adversarial object on the same image overlaps it with IOU >= t_iou.
"""
from __future__ import annotations

from typing import Mapping, Sequence, Union

import numpy as np

from ..boxes import corners_array, iou_matrix
from ..errors import UndefinedMetricError


def _check_aligned(benign, adversarial):
    if len(benign) != len(adversarial):
        raise ValueError("benign and adversarial detections must be aligned per image")


def _overlaps(b_objs, a_objs) -> np.ndarray:
    return iou_matrix(corners_array(o.box for o in b_objs), corners_array(o.box for o in a_objs))


def _total(benign) -> int:
    n = sum(len(v) for v in benign)
    if n == 0:
        raise UndefinedMetricError("no objects detected on benign inputs")
    return n


def asr_vanishing(benign, adversarial, t_iou: float = 0.5) -> float:
    """Fraction of benign detections with no adversarial detection overlapping them (class-agnostic)."""
    _check_aligned(benign, adversarial)
    total = _total(benign)
    vanished = 0
    for b_objs, a_objs in zip(benign, adversarial):
        ious = _overlaps(b_objs, a_objs)
        covered = (ious >= t_iou).any(axis=1) if ious.size else np.zeros(len(b_objs), dtype=bool)
        vanished += int((~covered).sum())
    return vanished / total


def asr_fabrication(benign, adversarial) -> float:
    """Fraction of images with more adversarial than benign detections."""
    _check_aligned(benign, adversarial)
    if len(benign) == 0:
        raise UndefinedMetricError("empty dataset")
    return sum(len(a) > len(b) for b, a in zip(benign, adversarial)) / len(benign)


TargetSpec = Union[Mapping[int, int], Sequence[Sequence[int]]]


def _targets_for(target_map: TargetSpec, image: int, b_objs):
    if isinstance(target_map, Mapping):
        return [target_map[o.class_id] for o in b_objs]
    per_image = list(target_map[image])
    if len(per_image) != len(b_objs):
        raise ValueError(f"image {image}: {len(per_image)} targets for {len(b_objs)} benign objects")
    return per_image


def asr_mislabeling(benign, adversarial, target_map: TargetSpec, t_iou: float = 0.5) -> float:
    """Fraction of benign detections relabelled to their target class at a matching box.

    ``target_map`` is either a class -> class mapping or, for per-object
    targets (most/least-likely modes), one list of target classes per image
    aligned with that image's benign detections.
    """
    _check_aligned(benign, adversarial)
    total = _total(benign)
    hits = 0
    for i, (b_objs, a_objs) in enumerate(zip(benign, adversarial)):
        if not b_objs:
            continue
        targets = _targets_for(target_map, i, b_objs)
        ious = _overlaps(b_objs, a_objs)
        labels = np.array([o.class_id for o in a_objs])
        for k, t in enumerate(targets):
            if len(a_objs) and np.any((ious[k] >= t_iou) & (labels == t)):
                hits += 1
    return hits / total


def misdetection_rate(benign, adversarial, t_iou: float = 0.5) -> float:
    """Fraction of benign detections with an overlapping adversarial detection of another class."""
    _check_aligned(benign, adversarial)
    total = _total(benign)
    hits = 0
    for b_objs, a_objs in zip(benign, adversarial):
        if not b_objs or not a_objs:
            continue
        ious = _overlaps(b_objs, a_objs)
        labels = np.array([o.class_id for o in a_objs])
        for k, o in enumerate(b_objs):
            if np.any((ious[k] >= t_iou) & (labels != o.class_id)):
                hits += 1
    return hits / total
