"""Perturbation cost: L-inf, per-pixel L2, L0 fraction and global-statistics SSIM."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError

K1 = 0.01 ** 2
K2 = 0.03 ** 2


@dataclass(frozen=True)
class DistortionRecord:
    linf: float
    l2_per_pixel: float
    l0_fraction: float
    ssim: float

    def to_dict(self) -> dict:
        return asdict(self)


def ssim(a: np.ndarray, b: np.ndarray, k1: float = K1, k2: float = K2) -> float:
    """Channel-averaged SSIM from whole-image means, variances and covariance.

    Values lie in [-1, 1] for inputs in [0, 1].
    """
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a.reshape(-1, a.shape[-1]).astype(np.float64)
    b = b.reshape(-1, b.shape[-1]).astype(np.float64)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    da, db = a - mu_a, b - mu_b
    var_a, var_b = (da * da).mean(axis=0), (db * db).mean(axis=0)
    cov = (da * db).mean(axis=0)
    per_channel = ((2 * mu_a * mu_b + k1) * (2 * cov + k2)) / ((mu_a ** 2 + mu_b ** 2 + k1) * (var_a + var_b + k2))
    return float(np.clip(per_channel.mean(), -1.0, 1.0))


def distortion(benign: np.ndarray, adversarial: np.ndarray) -> DistortionRecord:
    if benign.shape != adversarial.shape:
        raise ValidationError(f"shape mismatch {benign.shape} vs {adversarial.shape}")
    diff = adversarial.astype(np.float64) - benign.astype(np.float64)
    pixels = benign.shape[0] * benign.shape[1]
    q_b = np.round(np.clip(benign, 0, 1) * 255)
    q_a = np.round(np.clip(adversarial, 0, 1) * 255)
    changed = np.any(q_b != q_a, axis=-1)
    return DistortionRecord(
        linf=float(np.abs(diff).max()) if diff.size else 0.0,
        l2_per_pixel=float(np.sqrt(np.sum(diff ** 2)) / pixels),
        l0_fraction=float(changed.mean()),
        ssim=ssim(benign, adversarial),
    )


def mean_distortion(records: Sequence[DistortionRecord]) -> DistortionRecord:
    if not records:
        return DistortionRecord(0.0, 0.0, 0.0, 1.0)
    return DistortionRecord(*(float(np.mean([getattr(r, f) for r in records]))
                              for f in ("linf", "l2_per_pixel", "l0_fraction", "ssim")))
