from .ap import average_precision, evaluate_map, mean_ap, pr_curve
from .asr import asr_fabrication, asr_mislabeling, asr_vanishing, misdetection_rate
from .distortion import DistortionRecord, distortion, mean_distortion, ssim
from .report import REPORT_SCHEMA, EvaluationReport, objects_vs_threshold, strip_timing
from .timing import TimingRecord, median_timing, timing_wrap

__all__ = [
    "average_precision", "evaluate_map", "mean_ap", "pr_curve", "asr_fabrication", "asr_mislabeling",
    "asr_vanishing", "misdetection_rate", "DistortionRecord", "distortion", "mean_distortion", "ssim",
    "REPORT_SCHEMA", "EvaluationReport", "objects_vs_threshold", "strip_timing", "TimingRecord",
    "median_timing", "timing_wrap",
]
