"""Detector interface, shared backbone and grid loss."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..boxes import BoundingBox, DetectedObject, DetectionCandidate, GroundTruthObject, nms
from ..errors import ApplicabilityError, ResolutionMismatchError, ValidationError

STRIDE = 8
LOSS_NAMES = ("obj", "bbox", "cls")
# box log-size offsets are clamped only when decoding boxes, never in the loss
_LOG_SIZE_CLAMP = (-6.0, 4.0)


@dataclass(frozen=True)
class LossBundle:
    obj: float
    bbox: float
    cls: float

    @property
    def total(self) -> float:
        return self.obj + self.bbox + self.cls

    def select(self, which) -> float:
        return sum(getattr(self, w) for w in which)


def to_tensor(x: np.ndarray) -> torch.Tensor:
    """(H, W, 3) or (N, H, W, 3) array to an NCHW float64 tensor."""
    t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.dim() == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()


class Backbone(nn.Module):
    """Stride-8 convolutional stem with three or four blocks."""

    def __init__(self, depth: int = 3, width: int = 16):
        super().__init__()
        if depth not in (3, 4):
            raise ValidationError("backbone depth must be 3 or 4")
        chans = [3, width, 2 * width, 2 * width, 2 * width]
        blocks = []
        for i in range(depth):
            layers = [nn.Conv2d(chans[i], chans[i + 1], 3, padding=1), nn.BatchNorm2d(chans[i + 1]), nn.SiLU()]
            if i < 3:
                layers.append(nn.AvgPool2d(2))
            blocks.append(nn.Sequential(*layers))
        self.blocks = nn.ModuleList(blocks)
        self.depth = depth
        self.out_channels = chans[depth]

    def forward(self, x: torch.Tensor, return_features: bool = False):
        feats = []
        for block in self.blocks:
            x = block[2](block[1](block[0](x)))
            feats.append(x)
            if len(block) > 3:
                x = block[3](x)
        if return_features:
            return x, feats
        return x


def decode_grid(raw: torch.Tensor, stride: int, anchor: float):
    """Decode (B, 5+K, gh, gw) head output into pixel boxes and probabilities.

    Returns cx, cy, w, h, objectness with shape (B, gh, gw) and class
    probabilities with shape (B, gh, gw, K).
    """
    _, _, gh, gw = raw.shape
    gy, gx = torch.meshgrid(torch.arange(gh, dtype=raw.dtype), torch.arange(gw, dtype=raw.dtype), indexing="ij")
    cx = (gx + torch.sigmoid(raw[:, 0])) * stride
    cy = (gy + torch.sigmoid(raw[:, 1])) * stride
    w = anchor * torch.exp(raw[:, 2].clamp(*_LOG_SIZE_CLAMP))
    h = anchor * torch.exp(raw[:, 3].clamp(*_LOG_SIZE_CLAMP))
    obj = torch.sigmoid(raw[:, 4])
    probs = torch.softmax(raw[:, 5:], dim=1).permute(0, 2, 3, 1) if raw.shape[1] > 5 else None
    return cx, cy, w, h, obj, probs


def clip_corners(cx, cy, w, h, width: float, height: float) -> np.ndarray:
    """Center-form arrays to clipped (N, 4) corners; centers lie inside the image."""
    x1 = np.clip(cx - w / 2, 0, width)
    y1 = np.clip(cy - h / 2, 0, height)
    x2 = np.clip(cx + w / 2, 0, width)
    y2 = np.clip(cy + h / 2, 0, height)
    return np.stack([x1, y1, x2, y2], axis=-1)


def corners_to_box(c) -> BoundingBox:
    return BoundingBox.from_corners(float(c[0]), float(c[1]), float(c[2]), float(c[3]))


@dataclass
class GridTargets:
    mask: torch.Tensor  # (gh, gw) bool, cells owning an object
    offsets: torch.Tensor  # (gh, gw, 2) center offset inside the cell, in [0, 1)
    log_sizes: torch.Tensor  # (gh, gw, 2) log(size / anchor)
    classes: torch.Tensor  # (gh, gw) long, -1 where unassigned


def assign_targets(targets: Sequence[GroundTruthObject], grid: tuple[int, int], stride: int, anchor: float,
                   image_size: tuple[int, int]) -> GridTargets:
    """Assign each object to the cell containing its center.

    When two objects share a cell the larger one wins.
    """
    gh, gw = grid
    height, width = image_size
    mask = torch.zeros(gh, gw, dtype=torch.bool)
    offsets = torch.zeros(gh, gw, 2, dtype=torch.float64)
    log_sizes = torch.zeros(gh, gw, 2, dtype=torch.float64)
    classes = torch.full((gh, gw), -1, dtype=torch.long)
    for t in sorted(targets, key=lambda o: o.box.area):
        if not t.box.within(width, height):
            raise ValidationError(f"target box {t.box} outside {width}x{height} image")
        fx, fy = t.box.cx / stride, t.box.cy / stride
        i, j = min(int(fy), gh - 1), min(int(fx), gw - 1)
        mask[i, j] = True
        offsets[i, j, 0] = fx - j
        offsets[i, j, 1] = fy - i
        log_sizes[i, j, 0] = np.log(t.box.w / anchor)
        log_sizes[i, j, 1] = np.log(t.box.h / anchor)
        classes[i, j] = t.class_id
    return GridTargets(mask, offsets, log_sizes, classes)


def grid_loss(raw: torch.Tensor, assigned: Sequence[GridTargets], bg_weight: float = 0.5, with_classes: bool = True):
    """Objectness / box / class losses of a grid head, summed over the batch.

    Each image contributes its per-cell mean: binary cross-entropy on every
    cell's objectness (background cells weighted by ``bg_weight``), squared
    error on the box parameters of owning cells, and cross-entropy of owning
    cells. Returns a dict of scalar tensors keyed by ``LOSS_NAMES``.
    """
    b, _, gh, gw = raw.shape
    cells = gh * gw
    obj = raw.new_zeros(())
    bbox = raw.new_zeros(())
    cls = raw.new_zeros(())
    for k in range(b):
        tg = assigned[k]
        logit = raw[k, 4]
        pos = tg.mask
        # where() rather than a blend keeps -inf logits finite: BCE(-inf, 0) = 0
        bce = torch.where(pos, -F.logsigmoid(logit), -F.logsigmoid(-logit))
        weight = torch.where(pos, torch.ones_like(logit), torch.full_like(logit, bg_weight))
        obj = obj + (weight * bce).sum() / cells
        if pos.any():
            txy = torch.sigmoid(raw[k, 0:2]).permute(1, 2, 0)[pos]
            twh = raw[k, 2:4].permute(1, 2, 0)[pos]
            se = ((txy - tg.offsets[pos]) ** 2).sum() + ((twh - tg.log_sizes[pos]) ** 2).sum()
            bbox = bbox + se / cells
            if with_classes:
                logits = raw[k, 5:].permute(1, 2, 0)[pos]
                cls = cls + F.cross_entropy(logits, tg.classes[pos], reduction="sum") / cells
    return {"obj": obj, "bbox": bbox, "cls": cls}


class DetectorModel(nn.Module):
    """Differentiable detector over (H, W, 3) images in [0, 1].

    Subclasses implement ``_candidate_arrays`` and ``loss_tensors``. Every
    public method takes numpy images; tensor-level methods are used by the
    attacks and by training.
    """

    family = "abstract"
    supports_proposals = False

    def __init__(self, num_classes: int, resolution=(64, 64), backbone_depth: int = 3, width: int = 16,
                 bg_weight: float = 0.5):
        super().__init__()
        h, w = int(resolution[0]), int(resolution[1])
        if h % STRIDE or w % STRIDE or h < 32 or w < 32:
            raise ValidationError(f"resolution must be >= 32 and divisible by {STRIDE}")
        if not 2 <= num_classes <= 8:
            raise ValidationError("num_classes must be in [2, 8]")
        self.num_classes = num_classes
        self.input_resolution = (h, w)
        self.backbone_depth = backbone_depth
        self.width = width
        self.bg_weight = bg_weight
        self.backbone = Backbone(backbone_depth, width)

    @property
    def backbone_id(self) -> str:
        return f"conv{self.backbone_depth}"

    @property
    def model_id(self) -> str:
        return f"{self.family}-{self.backbone_id}"

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.input_resolution[0] // STRIDE, self.input_resolution[1] // STRIDE

    @property
    def anchor(self) -> float:
        return min(self.input_resolution) / 4.0

    def architecture(self) -> dict:
        return {"family": self.family, "num_classes": self.num_classes,
                "resolution": list(self.input_resolution), "backbone_depth": self.backbone_depth,
                "width": self.width, "bg_weight": self.bg_weight}

    def at_resolution(self, resolution) -> "DetectorModel":
        """A view of this model at another input resolution sharing all parameters."""
        h, w = int(resolution[0]), int(resolution[1])
        if h % STRIDE or w % STRIDE or h < 32 or w < 32:
            raise ValidationError(f"resolution must be >= 32 and divisible by {STRIDE}")
        view = copy.copy(self)
        view.__dict__["input_resolution"] = (h, w)
        return view

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[2] != 3:
            raise ValidationError(f"expected an (H, W, 3) image, got {x.shape}")
        if tuple(x.shape[:2]) != self.input_resolution:
            raise ResolutionMismatchError(f"image {x.shape[:2]} vs model {self.input_resolution}")

    def tensor(self, x: np.ndarray) -> torch.Tensor:
        self.check_input(x)
        return to_tensor(x)

    def assign(self, targets: Sequence[GroundTruthObject]) -> GridTargets:
        h, w = self.input_resolution
        return assign_targets(targets, self.grid_shape, STRIDE, self.anchor, (h, w))

    # -- inference ------------------------------------------------------
    def _candidate_arrays(self, xt: torch.Tensor):
        """Return (corners (S, 4), objectness (S,), class_probs (S, K)) numpy arrays."""
        raise NotImplementedError

    def candidates(self, x: np.ndarray) -> List[DetectionCandidate]:
        with torch.no_grad():
            corners, obj, probs = self._candidate_arrays(self.tensor(x))
        return [DetectionCandidate(corners_to_box(c), float(o), tuple(float(v) for v in p))
                for c, o, p in zip(corners, obj, probs)]

    def detect(self, x: np.ndarray, confidence_threshold: float = 0.5, iou_threshold: float = 0.5) -> List[DetectedObject]:
        with torch.no_grad():
            corners, obj, probs = self._candidate_arrays(self.tensor(x))
        conf = obj * probs.max(axis=1)
        keep = np.nonzero(conf >= confidence_threshold)[0]
        dets = [DetectedObject(corners_to_box(corners[i]), int(np.argmax(probs[i])), float(conf[i]),
                               tuple(float(v) for v in probs[i])) for i in keep]
        return nms(dets, iou_threshold, confidence_threshold)

    # -- losses and gradients --------------------------------------------
    def loss_tensors(self, xt: torch.Tensor, targets_batch: Sequence[Sequence[GroundTruthObject]],
                     training: bool = False) -> dict:
        raise NotImplementedError

    def loss_components(self, x: np.ndarray, targets: Sequence[GroundTruthObject]) -> LossBundle:
        with torch.no_grad():
            parts = self.loss_tensors(self.tensor(x), [targets])
        return LossBundle(*(float(parts[n]) for n in LOSS_NAMES))

    def loss_and_gradient(self, x: np.ndarray, targets: Sequence[GroundTruthObject], which=LOSS_NAMES):
        """Loss bundle and gradient of the selected loss sum w.r.t. the image."""
        which = tuple(which)
        if not which or any(w not in LOSS_NAMES for w in which):
            raise ValidationError(f"which must be a nonempty subset of {LOSS_NAMES}")
        xt = self.tensor(x).requires_grad_(True)
        parts = self.loss_tensors(xt, [targets])
        selected = sum(parts[w] for w in which)
        grad = None
        if selected.requires_grad:
            # box and class terms are constant when no object is designated
            (grad,) = torch.autograd.grad(selected, xt, allow_unused=True)
        g = np.zeros_like(x) if grad is None else to_image(grad)[0]
        return LossBundle(*(float(parts[n].detach()) for n in LOSS_NAMES)), g

    def input_gradient(self, x: np.ndarray, targets: Sequence[GroundTruthObject], which=LOSS_NAMES) -> np.ndarray:
        return self.loss_and_gradient(x, targets, which)[1]

    def backbone_features(self, x: np.ndarray) -> List[np.ndarray]:
        """Activations of the two earliest convolutional stages, each (C, h, w)."""
        with torch.no_grad():
            _, feats = self.backbone(self.tensor(x), return_features=True)
        return [f[0].numpy().copy() for f in feats[:2]]

    def backbone_feature_tensors(self, xt: torch.Tensor) -> List[torch.Tensor]:
        _, feats = self.backbone(xt, return_features=True)
        return feats[:2]

    def proposals(self, x: np.ndarray, nms_iou: float = 0.7):
        raise ApplicabilityError(f"{self.family} detectors have no region proposal stage")

    # -- parameters ------------------------------------------------------
    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.state_dict().values()]).astype("<f8")

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        state = self.state_dict()
        offset = 0
        new = {}
        for name, value in state.items():
            n = value.numel()
            if offset + n > flat.size:
                raise ValidationError("parameter array too short for architecture")
            new[name] = torch.from_numpy(np.array(flat[offset:offset + n], dtype=np.float64)).reshape(value.shape)
            offset += n
        if offset != flat.size:
            raise ValidationError("parameter array length does not match architecture")
        self.load_state_dict(new)
