from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence, Tuple


@dataclass(frozen=True)
class TimingRecord:
    detection_time_s: float
    attack_time_s: float

    @property
    def total_time_s(self) -> float:
        return self.detection_time_s + self.attack_time_s

    def to_dict(self) -> dict:
        return {**asdict(self), "total_time_s": self.total_time_s}


def timing_wrap(f: Callable, *args, **kwargs) -> Tuple[object, float]:
    """Run ``f`` and return (result, wall-clock seconds)."""
    start = time.perf_counter()
    out = f(*args, **kwargs)
    return out, time.perf_counter() - start


def median_timing(records: Sequence[TimingRecord]) -> TimingRecord:
    if not records:
        return TimingRecord(0.0, 0.0)
    return TimingRecord(statistics.median(r.detection_time_s for r in records),
                        statistics.median(r.attack_time_s for r in records))
