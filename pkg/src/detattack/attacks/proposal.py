"""Attacks that need a region proposal stage: DAG and RAP, plus the UEA feature loss."""
from __future__ import annotations

import time
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ValidationError
from ..models.base import STRIDE, to_image, to_tensor
from .base import AttackConfig, AttackResult, require_proposals

DAG_DEFAULTS = {"alpha": 0.5 / 255, "iterations": 40}
RAP_DEFAULTS = {"alpha": 0.5, "iterations": 40}


def dag_config(**overrides) -> AttackConfig:
    return AttackConfig(**{**DAG_DEFAULTS, **overrides})


def rap_config(**overrides) -> AttackConfig:
    return AttackConfig(**{**RAP_DEFAULTS, **overrides})


def dag_attack(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Dense adversary generation against a two-phase detector.

    Proposals come from the RPN with NMS at ``cfg.iou_nms_attack`` so that
    heavily overlapping regions survive. Each proposal keeps its benign
    class c and a random incorrect class c' drawn once from
    ``cfg.rng_seed``; every step descends sum_j z_j (p_c - p_c') with the
    gradient rescaled to unit L-inf norm times ``cfg.alpha``. The run stops
    once no foreground proposal still predicts its class c.
    """
    cfg = cfg or dag_config()
    require_proposals(model, "DAG")
    start = time.perf_counter()
    props = model.proposals(x, cfg.iou_nms_attack)
    anchor = model.detect(x, cfg.confidence_threshold, cfg.nms_iou)
    rng = np.random.default_rng(cfg.rng_seed)
    k = model.num_classes
    cells = torch.as_tensor([p.cell for p in props], dtype=torch.long)
    boxes = torch.as_tensor(np.array([p.box.corners for p in props]).reshape(-1, 4))
    correct = torch.as_tensor([p.class_id for p in props], dtype=torch.long)
    wrong = torch.as_tensor([(c + 1 + int(rng.integers(0, k - 1))) % k for c in correct.tolist()], dtype=torch.long)
    x_adv = x.copy()
    trace, used = [], 0
    for _ in range(cfg.iterations):
        if len(props) == 0:
            break
        xt = to_tensor(x_adv).requires_grad_(True)
        feat, raw = model.forward_rpn(xt)
        z = (torch.sigmoid(raw[0, 4].reshape(-1)[cells]) >= 0.5).to(xt.dtype).detach()
        probs = torch.softmax(model.classify(feat[0], boxes), dim=1)
        still_correct = (probs.argmax(dim=1) == correct) & (z > 0)
        if not bool(still_correct.any()):
            break
        idx = torch.arange(len(correct))
        loss = (z * (probs[idx, correct] - probs[idx, wrong])).sum()
        (r,) = torch.autograd.grad(loss, xt)
        norm = float(r.abs().max())
        trace.append(float(loss.detach()))
        if norm == 0.0:
            break
        x_adv = np.clip(x_adv - cfg.alpha / norm * to_image(r)[0], 0.0, 1.0)
        used += 1
    return AttackResult(x_adv, x.copy(), used, time.perf_counter() - start, trace, anchor, "dag")


def rap_attack(model, x: np.ndarray, cfg: Optional[AttackConfig] = None) -> AttackResult:
    """Robust adversarial perturbation: collapse the RPN.

    Every RPN proposal j (one per cell, before NMS) with objectness >= 0.5
    contributes log C_j plus the squared error between its box
    (cx / W, cy / H, log w / anchor, log h / anchor) and ``cfg.rap_offsets``.
    Steps descend that sum with the gradient rescaled to unit L2 norm times
    ``cfg.alpha``, for ``cfg.iterations`` rounds or until no proposal is
    foreground.
    """
    cfg = cfg or rap_config()
    require_proposals(model, "RAP")
    start = time.perf_counter()
    anchor = model.detect(x, cfg.confidence_threshold, cfg.nms_iou)
    h, w = model.input_resolution
    tau = torch.as_tensor(cfg.rap_offsets, dtype=torch.float64)
    x_adv = x.copy()
    trace, used = [], 0
    for _ in range(cfg.iterations):
        xt = to_tensor(x_adv).requires_grad_(True)
        _, raw = model.forward_rpn(xt)
        gh, gw = raw.shape[2:]
        logit = raw[0, 4].reshape(-1)
        z = (torch.sigmoid(logit) >= 0.5).to(xt.dtype).detach()
        if not bool(z.any()):
            break
        gy, gx = torch.meshgrid(torch.arange(gh, dtype=xt.dtype), torch.arange(gw, dtype=xt.dtype), indexing="ij")
        b = torch.stack([
            ((gx + torch.sigmoid(raw[0, 0])) * STRIDE / w).reshape(-1),
            ((gy + torch.sigmoid(raw[0, 1])) * STRIDE / h).reshape(-1),
            raw[0, 2].reshape(-1),
            raw[0, 3].reshape(-1),
        ], dim=1)
        se = ((b - tau) ** 2).sum(dim=1)
        loss = (z * (F.logsigmoid(logit) + se)).sum()
        (r,) = torch.autograd.grad(loss, xt)
        norm = float(r.norm())
        trace.append(float(loss.detach()))
        if norm == 0.0:
            break
        x_adv = np.clip(x_adv - cfg.alpha / norm * to_image(r)[0], 0.0, 1.0)
        used += 1
    return AttackResult(x_adv, x.copy(), used, time.perf_counter() - start, trace, anchor, "rap")


def proposal_attention(model, x: np.ndarray, nms_iou: float = 0.7, foreground_only: bool = True):
    """Binary attention maps, one per backbone feature stage: 1 inside proposals, 0 outside."""
    require_proposals(model, "UEA attention")
    props = model.proposals(x, nms_iou)
    h, w = model.input_resolution
    maps = []
    for feat in model.backbone_features(x):
        fh, fw = feat.shape[1:]
        a = np.zeros((fh, fw))
        ys = (np.arange(fh) + 0.5) * h / fh
        xs = (np.arange(fw) + 0.5) * w / fw
        for p in props:
            if foreground_only and not p.foreground:
                continue
            x1, y1, x2, y2 = p.box.corners
            a[np.ix_((ys >= y1) & (ys <= y2), (xs >= x1) & (xs <= x2))] = 1.0
        maps.append(a)
    return maps


def uea_feature_loss(model, x: np.ndarray, random_maps: Sequence[np.ndarray],
                     attention_weights: Sequence[np.ndarray]) -> float:
    """Multi-scale attention feature loss: sum_m ||A_m * (F_m(x) - R_m)||_2.

    ``F_m`` are the backbone feature stages, ``R_m`` fixed random maps of the
    same shape and ``A_m`` attention weights broadcastable to that shape
    (a (h, w) map applies to every channel). The norm is Frobenius.
    """
    feats = model.backbone_features(x)
    return feature_loss(feats, random_maps, attention_weights)


def feature_loss(feats, random_maps, attention_weights) -> float:
    if not (len(feats) == len(random_maps) == len(attention_weights)):
        raise ValidationError("need one random map and one attention map per feature stage")
    total = 0.0
    for f, r, a in zip(feats, random_maps, attention_weights):
        f, r, a = np.asarray(f, float), np.asarray(r, float), np.asarray(a, float)
        if r.shape != f.shape:
            raise ValidationError(f"random map shape {r.shape} != feature shape {f.shape}")
        try:
            weighted = np.broadcast_to(a, f.shape) * (f - r)
        except ValueError:
            raise ValidationError(f"attention shape {a.shape} does not broadcast to {f.shape}") from None
        total += float(np.sqrt(np.sum(weighted ** 2)))
    return total


def uea_feature_loss_tensor(model, xt: torch.Tensor, random_maps, attention_weights) -> torch.Tensor:
    """Differentiable variant over a (1, 3, H, W) tensor, for gradient-based use."""
    feats = model.backbone_feature_tensors(xt)
    total = xt.new_zeros(())
    for f, r, a in zip(feats, random_maps, attention_weights):
        r = torch.as_tensor(np.asarray(r), dtype=xt.dtype)
        a = torch.as_tensor(np.asarray(a), dtype=xt.dtype)
        total = total + (a * (f[0] - r)).pow(2).sum().sqrt()
    return total
