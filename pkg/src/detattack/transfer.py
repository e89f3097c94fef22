"""Cross-model and cross-resolution transferability of adversarial examples.

Adversarial examples are generated once per (source, image) at full
precision and then evaluated on every target. Resolution changes use the
same nearest-neighbour letterbox as dataset preprocessing.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .attacks import AttackConfig, default_config
from .benchmark import detect_all, run_attack
from .data import ShapesDataset, letterbox, rescale_dataset
from .errors import ApplicabilityError, ValidationError
from .metrics import evaluate_map

logger = logging.getLogger(__name__)


@dataclass
class TransferCell:
    source_model_id: str
    target_model_id: str
    source_resolution: int
    target_resolution: int
    attack_name: str
    adversarial_map: Optional[float]
    benign_map: Optional[float]
    error: Optional[str] = None

    @property
    def diagonal(self) -> bool:
        return (self.source_model_id == self.target_model_id
                and self.source_resolution == self.target_resolution)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_resolution(res) -> tuple:
    if np.isscalar(res):
        res = (int(res), int(res))
    h, w = int(res[0]), int(res[1])
    if h <= 0 or w <= 0:
        raise ValidationError(f"target resolution must be positive, got {res}")
    return h, w


def resize_adversarial(x_adv: np.ndarray, target_resolution) -> np.ndarray:
    """Nearest-neighbour resize to ``target_resolution``, padding any aspect-ratio mismatch.

    Output pixel i reads source index floor(i * src / dst); the same size is
    returned unchanged.
    """
    th, tw = _check_resolution(target_resolution)
    if x_adv.shape[:2] == (th, tw):
        return x_adv.copy()
    return letterbox(x_adv, (th, tw))[0]


def _map_percent(model, images, annotations, cfg: AttackConfig, t_iou: float) -> float:
    dets = detect_all(model, images, cfg.confidence_threshold, cfg.nms_iou)
    return 100.0 * evaluate_map(dets, annotations, model.num_classes, t_iou)[1]


def cross_model_matrix(attack: str, source_models: Sequence, target_models: Sequence, dataset: ShapesDataset,
                       cfg: Optional[AttackConfig] = None, jobs: int = 1, t_iou: float = 0.5) -> List[TransferCell]:
    """Attack each source model and evaluate its adversarial examples on every target.

    A source the attack does not apply to yields cells carrying the error
    message instead of numbers; the rest of the matrix is still computed.
    """
    cfg = cfg or default_config(attack)
    benign = {}
    cells = []
    for src in source_models:
        data = rescale_dataset(dataset, src.input_resolution)
        try:
            advs = [r.adversarial for r in run_attack(src, attack, data.images, cfg, jobs)]
        except ApplicabilityError as exc:
            logger.info("%s not applicable to %s: %s", attack, src.model_id, exc)
            advs, err = None, str(exc)
        for tgt in target_models:
            cell = TransferCell(src.model_id, tgt.model_id, src.input_resolution[0], tgt.input_resolution[0], attack,
                                None, None)
            tdata = rescale_dataset(dataset, tgt.input_resolution)
            key = (tgt.model_id, tgt.input_resolution)
            if key not in benign:
                benign[key] = _map_percent(tgt, tdata.images, tdata.annotations, cfg, t_iou)
            cell.benign_map = benign[key]
            if advs is None:
                cell.error = err
            else:
                moved = [resize_adversarial(a, tgt.input_resolution) for a in advs]
                cell.adversarial_map = _map_percent(tgt, moved, tdata.annotations, cfg, t_iou)
            cells.append(cell)
    return cells


def cross_resolution_matrix(attack: str, model, source_res: int, target_res_list: Sequence[int],
                            dataset: ShapesDataset, cfg: Optional[AttackConfig] = None, jobs: int = 1,
                            t_iou: float = 0.5) -> List[TransferCell]:
    """One row: attack at ``source_res`` and evaluate on each target-resolution instance.

    Instances at every resolution share the trained parameters of ``model``.
    """
    src = model.at_resolution((source_res, source_res))
    targets = [model.at_resolution((r, r)) for r in target_res_list]
    return cross_model_matrix(attack, [src], targets, dataset, cfg, jobs, t_iou)


def resolution_matrix(attack: str, model, resolutions: Sequence[int], dataset: ShapesDataset,
                      cfg: Optional[AttackConfig] = None, jobs: int = 1, t_iou: float = 0.5) -> List[TransferCell]:
    """Full square matrix with every resolution used once as the source."""
    cells = []
    for r in resolutions:
        cells.extend(cross_resolution_matrix(attack, model, r, resolutions, dataset, cfg, jobs, t_iou))
    return cells


def _axis_key(cell: TransferCell, axis: str, side: str):
    if axis == "model":
        return getattr(cell, f"{side}_model_id")
    return getattr(cell, f"{side}_resolution")


def as_table(cells: Sequence[TransferCell], axis: str = "model") -> Dict:
    """Nested {source: {target: adversarial mAP}} mapping."""
    if axis not in ("model", "resolution"):
        raise ValidationError("axis must be 'model' or 'resolution'")
    table: Dict = {}
    for c in cells:
        table.setdefault(_axis_key(c, axis, "source"), {})[_axis_key(c, axis, "target")] = c.adversarial_map
    return table


def diagonal_is_row_minimum(cells: Sequence[TransferCell], axis: str = "model") -> Dict:
    """For each source row, whether its diagonal cell is <= every other defined cell."""
    out = {}
    for src, row in as_table(cells, axis).items():
        diag = row.get(src)
        values = [v for v in row.values() if v is not None]
        out[src] = diag is not None and all(diag <= v for v in values)
    return out


def upsizing_gap(cells: Sequence[TransferCell]):
    """Mean adversarial mAP over upsized targets and over downsized targets."""
    up = [c.adversarial_map for c in cells if c.target_resolution > c.source_resolution and c.adversarial_map is not None]
    down = [c.adversarial_map for c in cells
            if c.target_resolution < c.source_resolution and c.adversarial_map is not None]
    return (float(np.mean(up)) if up else None, float(np.mean(down)) if down else None)


def matrix_csv(cells: Sequence[TransferCell], axis: str = "model") -> str:
    """Rows are sources and columns targets; entries are adversarial mAP in percent."""
    table = as_table(cells, axis)
    cols = []
    for row in table.values():
        cols.extend(k for k in row if k not in cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source"] + [str(c) for c in cols])
    for src, row in table.items():
        w.writerow([str(src)] + ["" if row.get(c) is None else f"{row[c]:.2f}" for c in cols])
    return buf.getvalue()


def matrix_json(cells: Sequence[TransferCell]) -> str:
    return json.dumps([c.to_dict() for c in cells], indent=2, sort_keys=True) + "\n"
