"""Experiment configuration file (JSON) with strict key checking.

Sections: ``backbone``, ``aspn``, ``head``, ``train``, ``data``; every field
is optional. An extra ``layers`` section describes a free-standing layer stack
for cost-model queries (``flops`` CLI) and is ignored elsewhere.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .aspn import ATTENTION_KINDS
from .errors import ConfigError
from .mrdcb import BackboneConfig

CLASSES = ("short", "open", "circle")


@dataclass
class AspnSection:
    width: int = 64
    attention: str = "lssm"
    lssm_kernel: int = 1

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError("aspn.width must be >= 1")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}; registered kinds: {', '.join(ATTENTION_KINDS)}")


@dataclass
class HeadConfig:
    num_classes: int = 3
    score_threshold: float = 0.3
    nms_iou: float = 0.5
    reg_weight: float = 1.0
    eval_score_threshold: float = 0.01
    max_detections: int = 100
    class_prior: float | None = 0.01

    def __post_init__(self):
        if self.class_prior is not None and not 0.0 < self.class_prior < 1.0:
            raise ConfigError("head.class_prior must lie in (0, 1) or be null")
        if self.num_classes < 1:
            raise ConfigError("head.num_classes must be >= 1")
        if not 0.0 <= self.score_threshold <= 1.0 or not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigError("head thresholds must lie in [0, 1]")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 300
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    eps: float = 1e-8
    seed: int = 0
    flip_augment: bool = False
    early_stop_patience: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("train.beta1 and train.beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.epochs >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")


@dataclass
class DataConfig:
    image_size: int = 64
    train_frac: float = 0.8
    classes: tuple = CLASSES

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError("data.image_size must be a positive multiple of 32")
        if not 0.0 < self.train_frac <= 1.0:
            raise ConfigError("data.train_frac must lie in (0, 1]")


@dataclass
class ExperimentConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    aspn: AspnSection = field(default_factory=AspnSection)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    layers: dict | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["data"]["classes"] = list(self.data.classes)
        if self.layers is None:
            d.pop("layers")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {"backbone": BackboneConfig, "aspn": AspnSection, "head": HeadConfig,
                    "train": TrainConfig, "data": DataConfig}
        unknown = set(d) - set(sections) - {"layers"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, kind in sections.items():
            sub = d.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(kind)}
            bad = set(sub) - allowed
            if bad:
                raise ConfigError(f"unknown fields in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = kind(**sub)
            except TypeError as exc:
                raise ConfigError(f"bad section {name!r}: {exc}") from None
        if "layers" in d:
            kwargs["layers"] = d["layers"]
        return cls(**kwargs)


def desk() -> ExperimentConfig:
    """64x64 images, C0=32, pyramid width 64, 60 epochs.

    A 160-image training split needs a faster schedule than the full-scale
    one: lr 1e-3, box regression weighted 5x (boxes of a few pixels are
    scored at IoU 0.5), and random horizontal flips.
    """
    cfg = ExperimentConfig()
    cfg.train.epochs = 60
    cfg.train.lr = 1e-3
    cfg.train.flip_augment = True
    cfg.head.reg_weight = 5.0
    return cfg


def full_scale() -> ExperimentConfig:
    """640x640 images and the 300-epoch schedule (far beyond desk budgets)."""
    cfg = ExperimentConfig()
    cfg.data.image_size = 640
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    # missing sections fall back to the desk preset
    base = desk().to_dict()
    for key, val in raw.items():
        if key in base and isinstance(val, dict):
            base[key].update(val)
        else:
            base[key] = val
    return ExperimentConfig.from_dict(base)
