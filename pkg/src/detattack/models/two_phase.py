from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..boxes import BoundingBox, corners_array, iou_matrix
from ..errors import ValidationError
from .base import STRIDE, DetectorModel, clip_corners, corners_to_box, decode_grid, grid_loss

DEFAULT_PROPOSAL_NMS = 0.7


@dataclass(frozen=True)
class Proposal:
    box: BoundingBox
    objectness: float
    foreground: int
    class_probs: tuple
    cell: int

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_probs))


@dataclass
class ProposalSet:
    proposals: List[Proposal]
    nms_iou: float

    def __len__(self):
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    @property
    def foreground(self) -> np.ndarray:
        return np.array([p.foreground for p in self.proposals], dtype=int)


def agnostic_nms(corners: np.ndarray, scores: np.ndarray, iou_threshold: float, limit: int) -> List[int]:
    """Class-agnostic greedy NMS; ties broken by index. Returns kept indices."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ious = iou_matrix(corners, corners)
    keep: list[int] = []
    for i in order:
        if keep and ious[i, keep].max() >= iou_threshold:
            continue
        keep.append(i)
        if len(keep) == limit:
            break
    return keep


def pool_boxes(feat: torch.Tensor, corners: torch.Tensor, stride: int = STRIDE, softness: float = 2.0) -> torch.Tensor:
    """Soft crop-and-average of a (C, gh, gw) map over (N, 4) pixel boxes -> (N, C).

    Cell centers are weighted by a product of sigmoids of their signed
    distance to each box edge, so small boxes still cover one cell.
    """
    _, gh, gw = feat.shape
    u = (torch.arange(gw, dtype=feat.dtype) + 0.5) * stride
    v = (torch.arange(gh, dtype=feat.dtype) + 0.5) * stride
    c = corners.detach()
    mx = torch.sigmoid((u[None] - c[:, 0:1]) / softness) * torch.sigmoid((c[:, 2:3] - u[None]) / softness)
    my = torch.sigmoid((v[None] - c[:, 1:2]) / softness) * torch.sigmoid((c[:, 3:4] - v[None]) / softness)
    m = my[:, :, None] * mx[:, None, :]
    total = m.sum(dim=(1, 2)).clamp_min(1e-12)
    return torch.einsum("nhw,chw->nc", m, feat) / total[:, None]


class TwoPhaseDetector(DetectorModel):
    """Proposal-then-classify detector, Faster R-CNN style.

    A region proposal head predicts objectness and a box per stride-8 cell.
    The top ``top_n`` proposals after class-agnostic NMS are pooled from the
    backbone map and classified by a two-layer head.
    """

    family = "two-phase"
    supports_proposals = True

    def __init__(self, num_classes: int, resolution=(64, 64), backbone_depth: int = 3, width: int = 16,
                 bg_weight: float = 0.5, top_n: int = 16, hidden: int = 32):
        super().__init__(num_classes, resolution, backbone_depth, width, bg_weight)
        c = self.backbone.out_channels
        self.top_n = top_n
        self.hidden = hidden
        self.rpn = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.SiLU(), nn.Conv2d(c, 5, 1))
        self.cls_head = nn.Sequential(nn.Linear(c, hidden), nn.SiLU(), nn.Linear(hidden, num_classes))
        with torch.no_grad():
            self.rpn[-1].bias[4] = -2.0

    def architecture(self) -> dict:
        return {**super().architecture(), "top_n": self.top_n, "hidden": self.hidden}

    def forward_rpn(self, xt: torch.Tensor):
        feat = self.backbone(xt)
        return feat, self.rpn(feat)

    def classify(self, feat: torch.Tensor, corners: torch.Tensor) -> torch.Tensor:
        """Class logits (N, K) for one image's (C, gh, gw) map at (N, 4) boxes."""
        return self.cls_head(pool_boxes(feat, corners))

    def decode_rpn(self, raw: torch.Tensor):
        """Differentiable (cells, 4) corners and (cells,) objectness for one image."""
        cx, cy, w, h, obj, _ = decode_grid(raw, STRIDE, self.anchor)
        height, width = self.input_resolution
        corners = torch.stack([
            (cx - w / 2).clamp(0, width), (cy - h / 2).clamp(0, height),
            (cx + w / 2).clamp(0, width), (cy + h / 2).clamp(0, height),
        ], dim=-1)
        return corners[0].reshape(-1, 4), obj[0].reshape(-1)

    def select(self, raw: torch.Tensor, nms_iou: float) -> List[int]:
        corners, obj = self.decode_rpn(raw.detach())
        return agnostic_nms(corners.numpy(), obj.numpy(), nms_iou, self.top_n)

    def proposals(self, x: np.ndarray, nms_iou: float = DEFAULT_PROPOSAL_NMS) -> ProposalSet:
        if not 0 < nms_iou <= 1:
            raise ValidationError("nms_iou must be in (0, 1]")
        with torch.no_grad():
            feat, raw = self.forward_rpn(self.tensor(x))
            keep = self.select(raw, nms_iou)
            corners, obj = self.decode_rpn(raw)
            probs = torch.softmax(self.classify(feat[0], corners[keep]), dim=1).numpy()
        props = []
        for k, cell in enumerate(keep):
            o = float(obj[cell])
            props.append(Proposal(corners_to_box(corners[cell].numpy()), o, int(o >= 0.5),
                                  tuple(float(p) for p in probs[k]), int(cell)))
        return ProposalSet(props, nms_iou)

    def _candidate_arrays(self, xt):
        feat, raw = self.forward_rpn(xt)
        keep = self.select(raw, DEFAULT_PROPOSAL_NMS)
        corners, obj = self.decode_rpn(raw)
        probs = torch.softmax(self.classify(feat[0], corners[keep]), dim=1)
        return corners[keep].numpy(), obj[keep].numpy(), probs.numpy()

    def loss_tensors(self, xt, targets_batch, training=False):
        feat, raw = self.forward_rpn(xt)
        assigned = [self.assign(t) for t in targets_batch]
        parts = grid_loss(raw, assigned, self.bg_weight, with_classes=False)
        cells = raw.shape[2] * raw.shape[3]
        cls = raw.new_zeros(())
        for k, targets in enumerate(targets_batch):
            if not targets:
                continue
            gt = corners_array(t.box for t in targets)
            boxes = [gt]
            labels = [t.class_id for t in targets]
            if training:
                # matched proposals teach the head to tolerate RPN box jitter
                corners, _ = self.decode_rpn(raw[k:k + 1].detach())
                keep = self.select(raw[k:k + 1], DEFAULT_PROPOSAL_NMS)
                pc = corners[keep].numpy()
                ious = iou_matrix(pc, gt)
                for i in range(len(keep)):
                    j = int(np.argmax(ious[i]))
                    if ious[i, j] >= 0.5:
                        boxes.append(pc[i:i + 1])
                        labels.append(targets[j].class_id)
            box_t = torch.as_tensor(np.concatenate(boxes), dtype=raw.dtype)
            logits = self.classify(feat[k], box_t)
            cls = cls + F.cross_entropy(logits, torch.as_tensor(labels), reduction="sum") / cells
        parts["cls"] = cls
        return parts
