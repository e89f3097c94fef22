"""Adversarial attacks on small object detectors and the metrics to benchmark them."""
from .boxes import BoundingBox, DetectedObject, DetectionCandidate, GroundTruthObject, iou, match_detections, nms
from .errors import (ApplicabilityError, DetAttackError, InvalidBoxError, ResolutionMismatchError, TrainingError,
                     UndefinedMetricError, ValidationError)

__version__ = "0.1.0"

__all__ = [
    "ApplicabilityError", "BoundingBox", "DetAttackError", "DetectedObject", "DetectionCandidate",
    "GroundTruthObject", "InvalidBoxError", "ResolutionMismatchError", "TrainingError", "UndefinedMetricError",
    "ValidationError", "iou", "match_detections", "nms",
]
