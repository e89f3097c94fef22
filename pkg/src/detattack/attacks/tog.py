"""The TOG attack family: untargeted, vanishing, fabrication and mislabeling.

Every variant iterates x <- clip_eps(x +/- alpha * sign(grad)) against the
benign detections of the victim, differing only in which losses are
differentiated, the designated detections and the step direction.
"""
from __future__ import annotations

import time
from typing import List, Optional, Sequence

import numpy as np

from ..boxes import GroundTruthObject
from ..errors import ValidationError
from .base import AttackConfig, AttackResult, anchors_as_targets, project_and_clip, signed


def _require_linf(cfg: AttackConfig) -> None:
    if cfg.norm != "Linf":
        raise ValidationError("TOG attacks are implemented for the Linf norm only")


def _iterate(model, x, cfg: AttackConfig, targets: Sequence[GroundTruthObject], which, direction: float):
    x_adv = x.copy()
    trace = []
    for _ in range(cfg.iterations):
        bundle, grad = model.loss_and_gradient(x_adv, targets, which)
        trace.append(bundle.select(which))
        x_adv = project_and_clip(x_adv + direction * cfg.alpha * signed(grad), x, cfg.eps)
    return x_adv, trace


def _benign_detections(model, x, cfg):
    return model.detect(x, cfg.confidence_threshold, cfg.nms_iou)


def tog_untargeted(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Gradient ascent on obj + bbox + cls against the benign detections."""
    cfg = cfg or AttackConfig()
    _require_linf(cfg)
    start = time.perf_counter()
    anchor = _benign_detections(model, x, cfg)
    x_adv, trace = _iterate(model, x, cfg, anchors_as_targets(anchor), ("obj", "bbox", "cls"), +1.0)
    return AttackResult(x_adv, x.copy(), cfg.iterations, time.perf_counter() - start, trace, anchor,
                        "tog-untargeted")


def tog_vanishing(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Gradient descent on the objectness loss with no objects designated."""
    cfg = cfg or AttackConfig()
    _require_linf(cfg)
    start = time.perf_counter()
    anchor = _benign_detections(model, x, cfg)
    if not anchor:
        return AttackResult(x.copy(), x.copy(), 0, time.perf_counter() - start, [], anchor, "tog-vanishing",
                            empty_anchor=True)
    x_adv, trace = _iterate(model, x, cfg, [], ("obj",), -1.0)
    return AttackResult(x_adv, x.copy(), cfg.iterations, time.perf_counter() - start, trace, anchor,
                        "tog-vanishing")


def tog_fabrication(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Gradient ascent on the objectness loss with no objects designated."""
    cfg = cfg or AttackConfig()
    _require_linf(cfg)
    start = time.perf_counter()
    anchor = _benign_detections(model, x, cfg)
    x_adv, trace = _iterate(model, x, cfg, [], ("obj",), +1.0)
    return AttackResult(x_adv, x.copy(), cfg.iterations, time.perf_counter() - start, trace, anchor,
                        "tog-fabrication")


def select_target_class(class_probs, true_class: int, mode: str = "ml") -> int:
    """Most-likely ("ml") or least-likely ("ll") incorrect class."""
    probs = np.asarray(class_probs, dtype=float)
    others = [c for c in range(len(probs)) if c != true_class]
    if not others:
        raise ValidationError("need at least two classes to pick an incorrect one")
    key = (lambda c: (-probs[c], c)) if mode == "ml" else (lambda c: (probs[c], c))
    if mode not in ("ml", "ll"):
        raise ValidationError(f"unknown target mode {mode!r}")
    return min(others, key=key)


def mislabel_targets(detections, cfg: AttackConfig) -> List[int]:
    if cfg.target_map is not None:
        missing = {d.class_id for d in detections} - set(cfg.target_map)
        if missing:
            raise ValidationError(f"target_map has no entry for classes {sorted(missing)}")
        return [cfg.target_map[d.class_id] for d in detections]
    return [select_target_class(d.class_probs, d.class_id, cfg.target_mode) for d in detections]


def tog_mislabeling(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Gradient descent on the full loss against the relabelled benign detections.

    Boxes and objectness of the benign detections are kept; each label is
    replaced by ``cfg.target_map`` or, without a map, by the most/least
    likely incorrect class of that detection (``cfg.target_mode``).
    """
    cfg = cfg or AttackConfig()
    _require_linf(cfg)
    start = time.perf_counter()
    anchor = _benign_detections(model, x, cfg)
    if not anchor:
        return AttackResult(x.copy(), x.copy(), 0, time.perf_counter() - start, [], anchor, "tog-mislabeling",
                            empty_anchor=True, targets=[])
    targets = mislabel_targets(anchor, cfg)
    relabelled = [GroundTruthObject(d.box, t) for d, t in zip(anchor, targets)]
    x_adv, trace = _iterate(model, x, cfg, relabelled, ("obj", "bbox", "cls"), -1.0)
    return AttackResult(x_adv, x.copy(), cfg.iterations, time.perf_counter() - start, trace, anchor,
                        "tog-mislabeling", targets=targets)
