"""Attack configuration, results and the step primitives shared by every attack."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..boxes import DetectedObject, GroundTruthObject
from ..errors import ApplicabilityError, ValidationError

NORMS = ("Linf", "L2")
TARGET_MODES = ("ml", "ll")


@dataclass
class AttackConfig:
    """Hyperparameters of one attack run. Pixel quantities use the [0, 1] scale."""

    eps: float = 8 / 255
    alpha: float = 2 / 255
    iterations: int = 10
    norm: str = "Linf"
    rng_seed: int = 0
    iou_nms_attack: float = 0.9
    target_map: Optional[Dict[int, int]] = None
    target_mode: str = "ml"
    confidence_threshold: float = 0.5
    nms_iou: float = 0.5
    rap_offsets: tuple = (0.0, 0.0, -3.0, -3.0)

    def __post_init__(self):
        if self.target_map is not None:
            self.target_map = {int(k): int(v) for k, v in self.target_map.items()}
        self.rap_offsets = tuple(float(v) for v in self.rap_offsets)
        self.validate()

    def validate(self) -> None:
        if self.eps < 0:
            raise ValidationError("eps must be >= 0")
        if self.alpha <= 0:
            raise ValidationError("alpha must be > 0")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.norm not in NORMS:
            raise ValidationError(f"norm must be one of {NORMS}")
        if self.target_mode not in TARGET_MODES:
            raise ValidationError(f"target_mode must be one of {TARGET_MODES}")
        if not 0 < self.iou_nms_attack <= 1 or not 0 < self.nms_iou <= 1:
            raise ValidationError("IOU thresholds must be in (0, 1]")
        if not 0 <= self.confidence_threshold <= 1:
            raise ValidationError("confidence_threshold must be in [0, 1]")
        if self.target_map is not None and any(k == v for k, v in self.target_map.items()):
            raise ValidationError("target_map must send every class to a different class")
        if len(self.rap_offsets) != 4:
            raise ValidationError("rap_offsets must be a quadruple")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["target_map"] is not None:
            d["target_map"] = {str(k): v for k, v in sorted(d["target_map"].items())}
        d["rap_offsets"] = list(d["rap_offsets"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown attack config keys {sorted(unknown)}")
        return cls(**known)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    benign: np.ndarray
    iterations_used: int
    attack_time_s: float
    trace: List[float] = field(default_factory=list)
    anchor_detections: List[DetectedObject] = field(default_factory=list)
    attack: str = ""
    empty_anchor: bool = False
    # mislabeling target class per anchor detection
    targets: Optional[List[int]] = None

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.adversarial - self.benign))) if self.benign.size else 0.0


def project_and_clip(x_adv: np.ndarray, x_ref: np.ndarray, eps: float) -> np.ndarray:
    """Clamp into the L-inf ball of radius ``eps`` around ``x_ref``, then into [0, 1]."""
    if x_adv.shape != x_ref.shape:
        raise ValidationError(f"shape mismatch {x_adv.shape} vs {x_ref.shape}")
    return np.clip(np.clip(x_adv, x_ref - eps, x_ref + eps), 0.0, 1.0)


def signed(grad: np.ndarray) -> np.ndarray:
    # np.sign maps 0 to 0, leaving flat pixels untouched
    return np.sign(grad)


def anchors_as_targets(detections) -> List[GroundTruthObject]:
    return [GroundTruthObject(d.box, d.class_id) for d in detections]


def require_proposals(model, attack: str) -> None:
    if not getattr(model, "supports_proposals", False):
        raise ApplicabilityError(f"{attack} needs a region proposal stage; {model.family} detectors have none")
