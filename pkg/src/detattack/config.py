"""Experiment configuration: YAML file sections mapped onto dataclasses."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import yaml

from .attacks import ATTACKS, AttackConfig, default_config
from .errors import ValidationError
from .models.train import FAMILIES


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValidationError(f"section {where!r} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValidationError(f"bad {where!r} section: {exc}") from None


@dataclass
class DatasetSpec:
    seed: Optional[int] = None
    train_count: int = 500
    test_count: int = 100
    resolution: int = 64
    num_classes: int = 3

    def validate(self):
        if self.train_count < 1 or self.test_count < 1:
            raise ValidationError("dataset counts must be >= 1")
        if self.resolution < 32 or self.resolution % 8:
            raise ValidationError("dataset resolution must be >= 32 and divisible by 8")
        if not 2 <= self.num_classes <= 8:
            raise ValidationError("num_classes must be in [2, 8]")


@dataclass
class ModelSpec:
    family: str = "one-phase"
    backbone: int = 3
    resolution: int = 64
    epochs: int = 40
    learning_rate: float = 1.0
    seed: Optional[int] = None

    @property
    def model_id(self) -> str:
        return f"{self.family}-conv{self.backbone}"

    def validate(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown model family {self.family!r}; expected one of {sorted(FAMILIES)}")
        if self.backbone not in (3, 4):
            raise ValidationError("backbone must be 3 or 4")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValidationError("epochs must be >= 0 and learning_rate > 0")


@dataclass
class AttackSpec:
    name: str = "tog-vanishing"
    model: Optional[str] = None
    params: dict = field(default_factory=dict)

    def validate(self):
        if self.name not in ATTACKS:
            raise ValidationError(f"unknown attack {self.name!r}; valid names: {', '.join(sorted(ATTACKS))}")
        self.config()

    def config(self, seed: Optional[int] = None) -> AttackConfig:
        params = dict(self.params)
        if seed is not None:
            params.setdefault("rng_seed", seed)
        unknown = set(params) - set(AttackConfig.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown attack parameters {sorted(unknown)}")
        return default_config(self.name, **params)


@dataclass
class MetricSpec:
    t_iou: float = 0.5
    interpolation: str = "11point"
    thresholds: List[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])

    def validate(self):
        if not 0 < self.t_iou <= 1:
            raise ValidationError("t_iou must be in (0, 1]")
        if self.interpolation not in ("11point", "all"):
            raise ValidationError("interpolation must be '11point' or 'all'")


@dataclass
class TransferSpec:
    attack: str = "tog-untargeted"
    models: Optional[List[str]] = None
    resolution_model: Optional[str] = None
    resolutions: List[int] = field(default_factory=lambda: [48, 64, 80, 96])

    def validate(self):
        if self.attack not in ATTACKS:
            raise ValidationError(f"unknown attack {self.attack!r}; valid names: {', '.join(sorted(ATTACKS))}")
        if self.models is not None and (not isinstance(self.models, list) or not self.models
                                        or not all(isinstance(m, str) for m in self.models)):
            raise ValidationError("transfer.models must be a nonempty list of model ids")
        if not self.resolutions or any(int(r) < 32 or int(r) % 8 for r in self.resolutions):
            raise ValidationError("transfer resolutions must be >= 32 and divisible by 8")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    models: List[ModelSpec] = field(default_factory=lambda: [ModelSpec()])
    attack: AttackSpec = field(default_factory=AttackSpec)
    metrics: MetricSpec = field(default_factory=MetricSpec)
    transfer: TransferSpec = field(default_factory=TransferSpec)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config sections {sorted(unknown)}")
        models = data.get("models")
        if models is None:
            models = [{}]
        if not isinstance(models, list) or not models:
            raise ValidationError("models must be a nonempty list")
        cfg = cls(
            seed=int(data.get("seed", 0)),
            out=str(data.get("out", "runs/default")),
            dataset=_build(DatasetSpec, data.get("dataset"), "dataset"),
            models=[_build(ModelSpec, m, "models") for m in models],
            attack=_build(AttackSpec, data.get("attack"), "attack"),
            metrics=_build(MetricSpec, data.get("metrics"), "metrics"),
            transfer=_build(TransferSpec, data.get("transfer"), "transfer"),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        self.dataset.validate()
        for m in self.models:
            m.validate()
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate model ids {ids}")
        self.attack.validate()
        self.metrics.validate()
        self.transfer.validate()
        for ref in [self.attack.model, self.transfer.resolution_model, *(self.transfer.models or [])]:
            if ref is not None and ref not in ids:
                raise ValidationError(f"model {ref!r} is not among the configured models {ids}")

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def model_seed(self, spec: ModelSpec) -> int:
        return self.seed if spec.seed is None else spec.seed

    def model_spec(self, model_id: Optional[str]) -> ModelSpec:
        if model_id is None:
            return self.models[0]
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise ValidationError(f"model {model_id!r} is not configured")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file {p} does not exist")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {p}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ValidationError("config file must hold a mapping")
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
