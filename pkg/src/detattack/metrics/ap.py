"""Interpolated average precision and mAP."""
from __future__ import annotations

from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..boxes import DetectedObject, GroundTruthObject, corners_array, iou_matrix
from ..errors import UndefinedMetricError

INTERPOLATIONS = ("11point", "all")


def pr_curve(detections: Sequence[Tuple[DetectedObject, object]], ground_truth: Mapping[object, Sequence[GroundTruthObject]],
             class_id: int, t_iou: float = 0.5):
    """Precision and recall after each detection of ``class_id``, ranked by confidence.

    A detection is a true positive when its best-overlapping still-unmatched
    ground truth of the same class in the same image has IOU >= ``t_iou``;
    that ground truth is then consumed. Returns (precision, recall,
    confidence, npos).
    """
    gts = {img: [g for g in objs if g.class_id == class_id] for img, objs in ground_truth.items()}
    npos = sum(len(v) for v in gts.values())
    dets = [(d, img) for d, img in detections if d.class_id == class_id]
    dets.sort(key=lambda di: -di[0].confidence)
    used = {img: np.zeros(len(v), dtype=bool) for img, v in gts.items()}
    gt_corners = {img: corners_array(g.box for g in v) for img, v in gts.items()}
    tp = np.zeros(len(dets))
    for k, (d, img) in enumerate(dets):
        cand = gt_corners.get(img)
        if cand is None or len(cand) == 0:
            continue
        ious = iou_matrix(corners_array([d.box]), cand)[0]
        ious[used[img]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= t_iou:
            used[img][j] = True
            tp[k] = 1.0
    ctp = np.cumsum(tp)
    ranks = np.arange(1, len(dets) + 1)
    precision = ctp / ranks if len(dets) else np.zeros(0)
    recall = ctp / npos if npos else np.zeros(len(dets))
    conf = np.array([d.confidence for d, _ in dets])
    return precision, recall, conf, npos


def _interpolate(precision: np.ndarray, recall: np.ndarray, mode: str) -> float:
    if mode == "11point":
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r - 1e-12
            total += precision[mask].max() if mask.any() else 0.0
        return total / 11.0
    if mode == "all":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")


def average_precision(detections, ground_truth, class_id: int, t_iou: float = 0.5,
                      interpolation: str = "11point") -> Optional[float]:
    """AP of one class; ``None`` when the class has no ground truth (undefined)."""
    precision, recall, _, npos = pr_curve(detections, ground_truth, class_id, t_iou)
    if npos == 0:
        return None
    return float(_interpolate(precision, recall, interpolation))


def mean_ap(per_class: Mapping[int, Optional[float]]) -> float:
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise UndefinedMetricError("no class has a defined AP")
    return float(np.mean(defined))


def evaluate_map(detections_per_image: Sequence[Sequence[DetectedObject]],
                 ground_truth_per_image: Sequence[Sequence[GroundTruthObject]], num_classes: int,
                 t_iou: float = 0.5, interpolation: str = "11point") -> Tuple[Dict[int, Optional[float]], float]:
    """Per-class AP and mAP (both as fractions) over aligned image lists."""
    if len(detections_per_image) != len(ground_truth_per_image):
        raise ValueError("detections and ground truth must be aligned per image")
    flat = [(d, i) for i, dets in enumerate(detections_per_image) for d in dets]
    gt = dict(enumerate(ground_truth_per_image))
    per_class = {c: average_precision(flat, gt, c, t_iou, interpolation) for c in range(num_classes)}
    return per_class, mean_ap(per_class)
