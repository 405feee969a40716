"""Experiment configuration: one JSON document, one top-level seed."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SamplerConfig, SyntheticSpec, generate_synthetic, load_cohort, split_cohort
from .errors import ValidationError
from .model import BicephConfig, TrainParams, task_classes

CONFIG_VERSION = 1


@dataclass
class ModelParams:
    backbone_dims: tuple = (128,)
    flat_dim: int = 64
    embed_dim: int = 64
    concat_head_dims: tuple = (32, 16, 8)
    margin: float = 0.2
    triplet_weight: float = 1.0

    def to_dict(self):
        d = asdict(self)
        d["backbone_dims"] = list(self.backbone_dims)
        d["concat_head_dims"] = list(self.concat_head_dims)
        return d


def _build(cls, d, section):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    seed: int = 0
    task: str = "CNvsAD"
    cohort_path: str | None = None
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelParams = field(default_factory=ModelParams)
    train: TrainParams = field(default_factory=TrainParams)
    test_frac: float = 0.2
    val_frac_of_train: float = 0.2
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.resolve()

    def resolve(self) -> "ExperimentConfig":
        """Tie the data section to the top-level seed and task, then validate."""
        classes = task_classes(self.task)
        self.data.seed = int(self.seed)
        self.data.classes = tuple(classes)
        self.data.validate()
        self.sampler.validate()
        self.train.validate()
        return self

    @property
    def classes(self) -> tuple:
        return task_classes(self.task)

    def cohort(self):
        if self.cohort_path:
            cohort = load_cohort(self.cohort_path).restrict(self.classes)
            if len(cohort) == 0:
                raise ValidationError(f"{self.cohort_path} has no subjects of classes {self.classes}")
            return cohort
        return generate_synthetic(self.data)

    def splits(self, cohort=None) -> dict:
        cohort = self.cohort() if cohort is None else cohort
        return split_cohort(cohort, self.test_frac, self.val_frac_of_train, self.seed)

    def biceph_config(self, input_dim: int) -> BicephConfig:
        return BicephConfig(input_dim=input_dim, num_classes=len(self.classes), **asdict(self.model))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "task": self.task,
            "cohort_path": self.cohort_path,
            "data": self.data.to_dict(),
            "sampler": asdict(self.sampler),
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "test_frac": self.test_frac,
            "val_frac_of_train": self.val_frac_of_train,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValidationError(f"unsupported config version {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(d.pop("data", None) or {})
        if "classes" in data:
            data["classes"] = tuple(data["classes"])
        return cls(
            data=_build(SyntheticSpec, data, "data"),
            sampler=_build(SamplerConfig, d.pop("sampler", None), "sampler"),
            model=_build(ModelParams, d.pop("model", None), "model"),
            train=_build(TrainParams, d.pop("train", None), "train"),
            **d,
        )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
