"""Evaluation report assembly and JSON / CSV emission."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..boxes import nms
from .distortion import DistortionRecord
from .timing import TimingRecord

SCHEMA_VERSION = 1

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "attack", "model", "num_images", "per_class_ap", "benign_map", "map",
                 "distortion", "timing"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "attack": {"type": "string"},
        "model": {"type": "string"},
        "num_images": {"type": "integer", "minimum": 0},
        "class_names": {"type": "array", "items": {"type": "string"}},
        "per_class_ap": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "benign_per_class_ap": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "map": {"type": "number", "minimum": 0, "maximum": 1},
        "benign_map": {"type": "number", "minimum": 0, "maximum": 1},
        "asr": {"type": ["number", "null"]},
        "mr": {"type": ["number", "null"]},
        "distortion": {
            "type": "object",
            "required": ["linf", "l2_per_pixel", "l0_fraction", "ssim"],
            "properties": {k: {"type": "number"} for k in ("linf", "l2_per_pixel", "l0_fraction", "ssim")},
        },
        "timing": {
            "type": "object",
            "required": ["detection_time_s", "attack_time_s", "total_time_s"],
            "properties": {k: {"type": "number"} for k in ("detection_time_s", "attack_time_s", "total_time_s")},
        },
        "objects_vs_threshold": {"type": "object"},
    },
}

TIMING_KEYS = ("timing",)


@dataclass
class EvaluationReport:
    attack: str
    model: str
    num_images: int
    per_class_ap: Dict[int, Optional[float]]
    map_value: float
    benign_per_class_ap: Dict[int, Optional[float]]
    benign_map: float
    distortion: DistortionRecord
    timing: TimingRecord
    asr: Optional[float] = None
    mr: Optional[float] = None
    class_names: List[str] = field(default_factory=list)
    objects_vs_threshold: Dict[str, List[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def ap_map(d):
            return {str(k): (None if v is None else float(v)) for k, v in sorted(d.items())}

        return {
            "schema_version": SCHEMA_VERSION,
            "attack": self.attack,
            "model": self.model,
            "num_images": self.num_images,
            "class_names": list(self.class_names),
            "per_class_ap": ap_map(self.per_class_ap),
            "benign_per_class_ap": ap_map(self.benign_per_class_ap),
            "map": float(self.map_value),
            "benign_map": float(self.benign_map),
            "asr": self.asr,
            "mr": self.mr,
            "distortion": self.distortion.to_dict(),
            "timing": self.timing.to_dict(),
            "objects_vs_threshold": self.objects_vs_threshold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """One row per class followed by a summary row; AP and mAP in percent."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "class", "benign_ap", "adv_ap", "asr", "mr", "linf", "l2_per_pixel", "l0_fraction",
                    "ssim", "detection_time_s", "attack_time_s", "total_time_s"])
        for c in sorted(self.per_class_ap):
            name = self.class_names[c] if c < len(self.class_names) else str(c)
            w.writerow(["class", name, _pct(self.benign_per_class_ap.get(c)), _pct(self.per_class_ap[c])]
                       + [""] * 9)
        d, t = self.distortion, self.timing
        w.writerow(["summary", "all", _pct(self.benign_map), _pct(self.map_value), _fmt(self.asr), _fmt(self.mr),
                    _fmt(d.linf), _fmt(d.l2_per_pixel), _fmt(d.l0_fraction), _fmt(d.ssim),
                    _fmt(t.detection_time_s), _fmt(t.attack_time_s), _fmt(t.total_time_s)])
        return buf.getvalue()


def _pct(v):
    return "" if v is None else f"{100.0 * v:.2f}"


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}


def objects_vs_threshold(candidates_per_image: Sequence[Sequence], thresholds: Sequence[float],
                         iou_threshold: float = 0.5) -> List[float]:
    """Mean post-NMS detection count per image at each confidence threshold."""
    if not candidates_per_image:
        return [0.0 for _ in thresholds]
    out = []
    for t in thresholds:
        counts = [len(nms(c, iou_threshold, min(max(t, 0.0), 1.0))) if t <= 1.0 else 0 for c in candidates_per_image]
        out.append(float(np.mean(counts)))
    return out
