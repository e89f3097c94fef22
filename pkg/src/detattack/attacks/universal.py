"""Input-agnostic TOG perturbations trained offline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..errors import ValidationError
from ..models.base import to_tensor
from .base import AttackConfig

logger = logging.getLogger(__name__)

UNIVERSAL_MODES = {"vanishing": -1.0, "fabrication": +1.0}
# one perturbation must serve every image, so it gets a wider budget than per-image TOG
UNIVERSAL_DEFAULTS = {"eps": 24 / 255, "alpha": 1 / 255}


def universal_config(**overrides) -> AttackConfig:
    return AttackConfig(**{**UNIVERSAL_DEFAULTS, **overrides})


@dataclass
class UniversalPerturbation:
    delta: np.ndarray
    eps: float
    source_model_id: str
    training_epochs: int
    mode: str = "vanishing"
    trace: list = field(default_factory=list)


def tog_universal_train(model, images: Sequence[np.ndarray], cfg: Optional[AttackConfig] = None, epochs: int = 10,
                        mode: str = "vanishing", batch_size: int = 16, learning_rate: Optional[float] = None
                        ) -> UniversalPerturbation:
    """Train one perturbation for every image.

    Each minibatch step moves ``delta`` by ``learning_rate`` (default
    ``cfg.alpha``) along the sign of the objectness-loss gradient summed
    over the batch, descending for vanishing and ascending for fabrication,
    then projects it back into the eps-ball.
    """
    if mode not in UNIVERSAL_MODES:
        raise ValidationError(f"universal perturbations support {sorted(UNIVERSAL_MODES)}, not {mode!r}")
    cfg = cfg or universal_config()
    lr = cfg.alpha if learning_rate is None else learning_rate
    h, w = model.input_resolution
    delta = np.zeros((h, w, 3))
    if epochs <= 0 or not len(images):
        return UniversalPerturbation(delta, cfg.eps, model.model_id, 0, mode)
    for img in images:
        model.check_input(img)
    stack = to_tensor(np.stack(images))
    rng = np.random.default_rng(cfg.rng_seed)
    direction = UNIVERSAL_MODES[mode]
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        epoch_loss = 0.0
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            d = to_tensor(delta).requires_grad_(True)
            batch = (stack[idx] + d).clamp(0.0, 1.0)
            loss = model.loss_tensors(batch, [[] for _ in idx])["obj"]
            (grad,) = torch.autograd.grad(loss, d)
            g = grad[0].permute(1, 2, 0).numpy()
            delta = np.clip(delta + direction * lr * np.sign(g), -cfg.eps, cfg.eps)
            epoch_loss += float(loss.detach())
        trace.append(epoch_loss / len(images))
        logger.debug("universal epoch %d obj loss %.5f", epoch, trace[-1])
    return UniversalPerturbation(delta, cfg.eps, model.model_id, epochs, mode, trace)


def apply_universal(x: np.ndarray, up: UniversalPerturbation) -> np.ndarray:
    if x.shape != up.delta.shape:
        raise ValidationError(f"perturbation shape {up.delta.shape} does not match image {x.shape}")
    return np.clip(x + up.delta, 0.0, 1.0)
