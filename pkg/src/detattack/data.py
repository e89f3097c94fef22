"""Synthetic shapes dataset, letterbox padding and the on-disk dataset format.

Images are float64 arrays of shape (H, W, 3) in [0, 1]. Generated pixels are
multiples of 1/255 so PNG storage round-trips exactly.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage

from .boxes import BoundingBox, GroundTruthObject
from .errors import ValidationError

SHAPE_NAMES = ("circle", "square", "triangle", "diamond", "cross", "ring", "hexagon", "bar")
PAD_VALUE = 0.5
# low-frequency background variation plus faint pixel noise
BACKGROUND_BLOB_STD = 0.04
PIXEL_NOISE_STD = 0.01
MIN_CONTRAST = 0.15
MAX_CONTRAST = 0.3


@dataclass
class ShapesDataset:
    images: List[np.ndarray]
    annotations: List[List[GroundTruthObject]]
    seed: int
    class_names: List[str]
    resolution: Tuple[int, int] = (64, 64)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, start: int, stop: int) -> "ShapesDataset":
        return ShapesDataset(self.images[start:stop], self.annotations[start:stop], self.seed,
                             list(self.class_names), self.resolution, dict(self.meta))

    def object_count(self) -> int:
        return sum(len(a) for a in self.annotations)


def _shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean mask of a shape filling a size x size square."""
    r = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dx, dy = xx - r, yy - r
    if kind == "circle":
        m = dx * dx + dy * dy <= (r + 0.25) ** 2
    elif kind == "square":
        m = np.ones((size, size), dtype=bool)
    elif kind == "triangle":
        # apex at top center, base along the bottom row
        m = np.abs(dx) <= (yy + 0.5) / size * (r + 0.5)
    elif kind == "diamond":
        m = np.abs(dx) + np.abs(dy) <= r + 0.5
    elif kind == "cross":
        arm = max(1.0, size / 6.0)
        m = (np.abs(dx) <= arm) | (np.abs(dy) <= arm)
    elif kind == "ring":
        d2 = dx * dx + dy * dy
        m = (d2 <= (r + 0.25) ** 2) & (d2 >= (0.55 * r) ** 2)
    elif kind == "hexagon":
        m = (np.abs(dy) <= r * 0.866 + 0.5) & (np.abs(dx) * 0.866 + np.abs(dy) * 0.5 <= r * 0.866 + 0.5)
    elif kind == "bar":
        m = np.abs(dy) <= max(1.0, size / 5.0)
    else:
        raise ValueError(kind)
    return m


def _smooth_noise(rng, h, w, std, cells=4):
    """Bilinear upsampling of a (cells + 1)^2 grid of Gaussian values."""
    coarse = rng.normal(0.0, std, size=(cells + 1, cells + 1, 3))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x0 + 1] * fx
    bot = coarse[y0 + 1][:, x0] * (1 - fx) + coarse[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def _disjoint(box, others, gap=2):
    x1, y1, x2, y2 = box
    for a1, b1, a2, b2 in others:
        if x1 < a2 + gap and a1 < x2 + gap and y1 < b2 + gap and b1 < y2 + gap:
            return False
    return True


def _render(rng: np.random.Generator, h: int, w: int, num_classes: int):
    bg = rng.uniform(0.25, 0.75, size=3)
    img = bg[None, None, :] + _smooth_noise(rng, h, w, BACKGROUND_BLOB_STD)
    img += rng.normal(0.0, PIXEL_NOISE_STD, size=(h, w, 3))
    n_obj = int(rng.integers(1, 5))
    lo, hi = max(8, int(0.15 * min(h, w))), max(9, int(0.35 * min(h, w)))
    placed, objects = [], []
    for _ in range(n_obj):
        for _attempt in range(50):
            size = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(0, w - size + 1))
            y0 = int(rng.integers(0, h - size + 1))
            if _disjoint((x0, y0, x0 + size, y0 + size), placed):
                break
        else:
            continue
        cls = int(rng.integers(0, num_classes))
        mask = _shape_mask(SHAPE_NAMES[cls], size)
        # per-channel offset from the background, visible but bounded
        delta = rng.uniform(-MAX_CONTRAST, MAX_CONTRAST, size=3)
        while np.abs(delta).max() < MIN_CONTRAST:
            delta = rng.uniform(-MAX_CONTRAST, MAX_CONTRAST, size=3)
        color = bg + delta
        region = img[y0:y0 + size, x0:x0 + size]
        region[mask] = color + rng.normal(0.0, PIXEL_NOISE_STD, size=(int(mask.sum()), 3))
        ys, xs = np.nonzero(mask)
        box = BoundingBox.from_corners(x0 + xs.min(), y0 + ys.min(), x0 + xs.max() + 1.0, y0 + ys.max() + 1.0)
        placed.append((x0, y0, x0 + size, y0 + size))
        objects.append(GroundTruthObject(box, cls))
    pixels = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return pixels, objects


def generate_shapes_dataset(seed: int, count: int, resolution=(64, 64), num_classes: int = 3) -> ShapesDataset:
    """Generate ``count`` images each holding 1-4 non-overlapping shapes.

    Every image draws from its own child generator so a prefix of a larger
    dataset equals the smaller dataset with the same seed.
    """
    h, w = int(resolution[0]), int(resolution[1])
    if count < 1:
        raise ValidationError("count must be >= 1")
    if not 2 <= num_classes <= len(SHAPE_NAMES):
        raise ValidationError(f"num_classes must be in [2, {len(SHAPE_NAMES)}]")
    if h < 32 or w < 32:
        raise ValidationError("resolution must be at least 32x32")
    children = np.random.SeedSequence(seed).spawn(count)
    images, annotations = [], []
    for child in children:
        rng = np.random.default_rng(child)
        img, objs = _render(rng, h, w, num_classes)
        images.append(img)
        annotations.append(objs)
    return ShapesDataset(images, annotations, seed, list(SHAPE_NAMES[:num_classes]), (h, w))


def letterbox(image: np.ndarray, size: Tuple[int, int]) -> tuple[np.ndarray, float, tuple[int, int]]:
    """Nearest-neighbour resize preserving aspect ratio, then pad to ``size``.

    Returns the padded image, the scale factor and the (top, left) offset.
    """
    th, tw = size
    h, w = image.shape[:2]
    scale = min(th / h, tw / w)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    rows = np.minimum((np.arange(nh) * h / nh).astype(int), h - 1)
    cols = np.minimum((np.arange(nw) * w / nw).astype(int), w - 1)
    resized = image[rows][:, cols]
    out = np.full((th, tw, image.shape[2]), PAD_VALUE, dtype=image.dtype)
    top, left = (th - nh) // 2, (tw - nw) // 2
    out[top:top + nh, left:left + nw] = resized
    return out, scale, (top, left)


def _rescale_objects(objs, scale, top, left):
    out = []
    for o in objs:
        b = o.box
        out.append(GroundTruthObject(BoundingBox(b.cx * scale + left, b.cy * scale + top, b.w * scale, b.h * scale),
                                     o.class_id))
    return out


def rescale_dataset(dataset: ShapesDataset, resolution) -> ShapesDataset:
    """Letterbox every image (and its annotation boxes) to ``resolution``."""
    th, tw = int(resolution[0]), int(resolution[1])
    if th <= 0 or tw <= 0:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    if tuple(dataset.resolution) == (th, tw):
        return dataset
    images, annotations = [], []
    for img, objs in zip(dataset.images, dataset.annotations):
        out, scale, (top, left) = letterbox(img, (th, tw))
        images.append(out)
        annotations.append(_rescale_objects(objs, scale, top, left))
    return ShapesDataset(images, annotations, dataset.seed, list(dataset.class_names), (th, tw), dict(dataset.meta))


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    PILImage.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _object_record(o: GroundTruthObject) -> dict:
    return {"class_id": o.class_id, "cx": o.box.cx, "cy": o.box.cy, "w": o.box.w, "h": o.box.h}


def save_dataset(dataset: ShapesDataset, root) -> None:
    """Write ``images/NNNN.png``, ``annotations.jsonl`` and ``meta.json``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (img, objs) in enumerate(zip(dataset.images, dataset.annotations)):
        name = f"images/{i:04d}.png"
        save_png(img, root / name)
        lines.append(json.dumps({"image": name, "objects": [_object_record(o) for o in objs]}))
    (root / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    meta = {"seed": dataset.seed, "class_names": dataset.class_names,
            "resolution": list(dataset.resolution), "count": len(dataset), **dataset.meta}
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(root) -> ShapesDataset:
    root = Path(root)
    ann_path = root / "annotations.jsonl"
    if not ann_path.exists():
        raise FileNotFoundError(f"no dataset at {root}")
    meta = json.loads((root / "meta.json").read_text()) if (root / "meta.json").exists() else {}
    images, annotations = [], []
    for line in ann_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        images.append(load_png(root / rec["image"]))
        annotations.append([
            GroundTruthObject(BoundingBox(o["cx"], o["cy"], o["w"], o["h"]), int(o["class_id"]))
            for o in rec["objects"]
        ])
    res = tuple(meta.get("resolution", images[0].shape[:2] if images else (64, 64)))
    names = meta.get("class_names") or [str(k) for k in range(1 + max((o.class_id for a in annotations for o in a), default=0))]
    return ShapesDataset(images, annotations, int(meta.get("seed", -1)), list(names), res)


def images_equal(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def directory_digest(root) -> dict:
    """Map of relative path to file bytes for every file under ``root``."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = Path(dirpath) / f
            out[str(p.relative_to(root))] = p.read_bytes()
    return out
