from __future__ import annotations

import torch
import torch.nn as nn

from .base import STRIDE, DetectorModel, clip_corners, decode_grid, grid_loss


class OnePhaseDetector(DetectorModel):
    """Grid detector: one candidate per stride-8 cell, YOLO style.

    Each cell predicts (tx, ty, tw, th, objectness logit, K class logits);
    centers decode as (cell + sigmoid(t)) * stride and sizes as
    anchor * exp(t) with a single square anchor of side min(H, W) / 4.
    """

    family = "one-phase"

    def __init__(self, num_classes: int, resolution=(64, 64), backbone_depth: int = 3, width: int = 16,
                 bg_weight: float = 0.5):
        super().__init__(num_classes, resolution, backbone_depth, width, bg_weight)
        c = self.backbone.out_channels
        self.head = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.SiLU(), nn.Conv2d(c, 5 + num_classes, 1))
        with torch.no_grad():
            self.head[-1].bias[4] = -2.0

    def forward(self, xt: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(xt))

    def _candidate_arrays(self, xt):
        raw = self.forward(xt)
        cx, cy, w, h, obj, probs = decode_grid(raw, STRIDE, self.anchor)
        height, width = self.input_resolution
        corners = clip_corners(cx[0].numpy().ravel(), cy[0].numpy().ravel(), w[0].numpy().ravel(),
                               h[0].numpy().ravel(), width, height)
        return corners, obj[0].numpy().ravel(), probs[0].reshape(-1, self.num_classes).numpy()

    def loss_tensors(self, xt, targets_batch, training=False):
        raw = self.forward(xt)
        assigned = [self.assign(t) for t in targets_batch]
        return grid_loss(raw, assigned, self.bg_weight)
