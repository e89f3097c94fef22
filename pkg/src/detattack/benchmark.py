"""Run an attack over a set of images and score it."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .attacks import AttackConfig, AttackResult, get_attack
from .metrics import (EvaluationReport, asr_fabrication, asr_mislabeling, asr_vanishing, distortion, evaluate_map,
                      mean_distortion, median_timing, misdetection_rate, objects_vs_threshold, timing_wrap)
from .metrics.timing import TimingRecord

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)

_worker_state: dict = {}


def _init_worker(model, attack_name, cfg):
    _worker_state.update(model=model, attack=get_attack(attack_name), cfg=cfg)


def _run_one(x):
    return _worker_state["attack"](_worker_state["model"], x, _worker_state["cfg"])


def run_attack(model, attack_name: str, images: Sequence[np.ndarray], cfg: AttackConfig,
               jobs: int = 1) -> List[AttackResult]:
    """Attack every image; results are returned in image order whatever ``jobs`` is."""
    attack = get_attack(attack_name)
    if jobs <= 1 or len(images) < 2:
        return [attack(model, x, cfg) for x in images]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(model, attack_name, cfg)) as ex:
        return list(ex.map(_run_one, images, chunksize=max(1, len(images) // (4 * jobs))))


@dataclass
class ImageRecord:
    index: int
    benign: list
    adversarial: list
    result: AttackResult
    detection_time_s: float

    @property
    def distortion(self):
        return distortion(self.result.benign, self.result.adversarial)

    def to_json(self) -> dict:
        def dets(ds):
            return [{"class_id": d.class_id, "confidence": round(d.confidence, 10),
                     "box": [round(v, 8) for v in (d.box.cx, d.box.cy, d.box.w, d.box.h)]} for d in ds]

        return {
            "image": self.index,
            "attack": self.result.attack,
            "iterations_used": self.result.iterations_used,
            "empty_anchor": self.result.empty_anchor,
            "targets": self.result.targets,
            "benign_detections": dets(self.benign),
            "adversarial_detections": dets(self.adversarial),
            "distortion": self.distortion.to_dict(),
            "timing": {"detection_time_s": self.detection_time_s, "attack_time_s": self.result.attack_time_s},
        }


def detect_all(model, images, confidence_threshold=0.5, iou_threshold=0.5):
    return [model.detect(x, confidence_threshold, iou_threshold) for x in images]


def score(model, attack_name: str, results: Sequence[AttackResult], annotations, cfg: AttackConfig,
          class_names: Sequence[str] = (), t_iou: float = 0.5, interpolation: str = "11point",
          thresholds: Sequence[float] = DEFAULT_THRESHOLDS):
    """Detections, metrics and per-image records for finished attack results."""
    records = []
    for i, r in enumerate(results):
        benign, det_t = timing_wrap(model.detect, r.benign, cfg.confidence_threshold, cfg.nms_iou)
        adv = model.detect(r.adversarial, cfg.confidence_threshold, cfg.nms_iou)
        records.append(ImageRecord(i, benign, adv, r, det_t))
    benign_dets = [r.benign for r in records]
    adv_dets = [r.adversarial for r in records]
    k = model.num_classes
    benign_pc, benign_map = evaluate_map(benign_dets, annotations, k, t_iou, interpolation)
    adv_pc, adv_map = evaluate_map(adv_dets, annotations, k, t_iou, interpolation)
    asr = mr = None
    n_benign = sum(len(b) for b in benign_dets)
    if attack_name == "tog-vanishing" and n_benign:
        asr = asr_vanishing(benign_dets, adv_dets, t_iou)
    elif attack_name == "tog-fabrication" and records:
        asr = asr_fabrication(benign_dets, adv_dets)
    elif attack_name == "tog-mislabeling" and n_benign:
        # anchors equal the benign detections, so per-object targets line up
        targets = [r.result.targets or [] for r in records]
        asr = asr_mislabeling(benign_dets, adv_dets, targets, t_iou)
        mr = misdetection_rate(benign_dets, adv_dets, t_iou)
    curves = {}
    if thresholds:
        curves = {
            "thresholds": [float(t) for t in thresholds],
            "benign": objects_vs_threshold([model.candidates(r.benign) for r in results], thresholds, cfg.nms_iou),
            "adversarial": objects_vs_threshold([model.candidates(r.adversarial) for r in results], thresholds,
                                                cfg.nms_iou),
        }
    timing = median_timing([TimingRecord(r.detection_time_s, r.result.attack_time_s) for r in records])
    report = EvaluationReport(
        attack=attack_name, model=model.model_id, num_images=len(records), per_class_ap=adv_pc, map_value=adv_map,
        benign_per_class_ap=benign_pc, benign_map=benign_map,
        distortion=mean_distortion([r.distortion for r in records]), timing=timing, asr=asr, mr=mr,
        class_names=list(class_names), objects_vs_threshold=curves)
    return report, records


def evaluate_attack(model, attack_name: str, images, annotations, cfg: Optional[AttackConfig] = None,
                    class_names: Sequence[str] = (), jobs: int = 1, **kwargs):
    from .attacks import default_config

    cfg = cfg or default_config(attack_name)
    results = run_attack(model, attack_name, images, cfg, jobs)
    return score(model, attack_name, results, annotations, cfg, class_names, **kwargs)
