"""Deterministic momentum gradient descent training."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch

from ..errors import TrainingError, ValidationError
from .base import DetectorModel, to_tensor
from .one_phase import OnePhaseDetector
from .two_phase import TwoPhaseDetector

logger = logging.getLogger(__name__)

FAMILIES = {"one-phase": OnePhaseDetector, "two-phase": TwoPhaseDetector}


def build_model(family: str = "one-phase", num_classes: int = 3, resolution=(64, 64), backbone_depth: int = 3,
                seed: int = 0, **kwargs) -> DetectorModel:
    """Construct a detector with parameters initialised from ``seed``."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = FAMILIES[family](num_classes, tuple(resolution), backbone_depth, **kwargs).double()
    finally:
        torch.random.set_rng_state(state)
    model.eval()
    return model


@dataclass
class TrainResult:
    model: DetectorModel
    losses: List[float] = field(default_factory=list)
    initial_loss: float = float("nan")


def dataset_loss(model: DetectorModel, images: torch.Tensor, annotations, batch_size: int = 64) -> float:
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(annotations), batch_size):
            parts = model.loss_tensors(images[s:s + batch_size], annotations[s:s + batch_size])
            total += float(sum(parts.values()))
    return total / len(annotations)


def train(model: DetectorModel, dataset, epochs: int = 40, learning_rate: float = 0.5, seed: int = 0,
          batch_size: int = 16, momentum: float = 0.9, clip_norm: float = 10.0,
          dtype: torch.dtype = torch.float32, decay_at: float = 0.75) -> TrainResult:
    """Minimise the mean obj + bbox + cls loss over ``dataset`` in place.

    The per-epoch trace holds the mean training loss measured after each
    epoch; ``initial_loss`` is measured before the first step. Optimisation
    runs in ``dtype`` and the model is returned in float64. The learning
    rate drops tenfold once ``decay_at`` of the epochs have run.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    images = to_tensor(np.stack(dataset.images)).to(dtype)
    if tuple(images.shape[2:]) != model.input_resolution:
        raise ValidationError("dataset resolution differs from model resolution")
    annotations = dataset.annotations
    result = TrainResult(model)
    if epochs <= 0:
        return result
    model.to(dtype)
    result.initial_loss = dataset_loss(model, images, annotations)
    rng = np.random.default_rng(seed)
    opt = torch.optim.SGD(model.parameters(), lr=learning_rate, momentum=momentum)
    model.train()
    try:
        for epoch in range(epochs):
            if epoch == int(decay_at * epochs) and epoch > 0:
                for group in opt.param_groups:
                    group["lr"] = learning_rate * 0.1
            order = rng.permutation(len(annotations))
            for s in range(0, len(order), batch_size):
                idx = order[s:s + batch_size]
                parts = model.loss_tensors(images[idx], [annotations[i] for i in idx], training=True)
                loss = sum(parts.values()) / len(idx)
                if not torch.isfinite(loss):
                    raise TrainingError(epoch)
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
                opt.step()
            epoch_loss = dataset_loss(model, images, annotations)
            if not np.isfinite(epoch_loss):
                raise TrainingError(epoch)
            result.losses.append(epoch_loss)
            logger.info("epoch %d loss %.5f", epoch, epoch_loss)
    finally:
        model.double()
        model.eval()
    return result
