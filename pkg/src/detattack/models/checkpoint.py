"""Checkpoint file: a magic line, one JSON header line, then raw '<f8' parameters."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MAGIC = b"DETATTACK-CKPT\n"
VERSION = 1


def save_checkpoint(model, path) -> None:
    flat = model.flat_parameters()
    header = {"version": VERSION, "architecture": model.architecture(), "num_parameters": int(flat.size)}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(flat.astype("<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as f:
        if f.readline() != MAGIC:
            raise ValidationError(f"{path} is not a detector checkpoint")
        return json.loads(f.readline())


def load_checkpoint(path):
    from .train import build_model

    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValidationError(f"{path} is not a detector checkpoint")
    rest = data[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("version") != VERSION:
        raise ValidationError(f"unsupported checkpoint version {header.get('version')}")
    flat = np.frombuffer(rest[nl + 1:], dtype="<f8")
    if flat.size != header["num_parameters"]:
        raise ValidationError("truncated checkpoint")
    arch = dict(header["architecture"])
    model = build_model(**arch)
    model.load_flat_parameters(flat)
    return model
