"""JSON run configurations for the command-line tools.

Every section is a flat dataclass; unknown keys are rejected so typos fail
loudly instead of silently falling back to defaults.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .losses import MarginSpec
from .toy import TrainConfig


@dataclass
class DatasetConfig:
    classes: int = 8
    per_class: int = 400
    low_std: float = 0.02
    high_std: float = 0.2
    input_dim: int = 8
    min_angle_deg: float = 60.0


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "relu"
    batch_norm: bool = True
    embedding_dim: int = 2


@dataclass
class LossConfig:
    name: str
    family: str
    margin: float = 0.0
    sigma: Optional[float] = None
    plus: bool = False
    clamp: Optional[list] = None

    def to_spec(self, scale=64.0):
        clamp = None if self.clamp is None else tuple(self.clamp)
        return MarginSpec(self.family, self.margin, self.sigma, self.plus, scale, clamp)


TOY_LOSSES = [
    LossConfig("arcface", "arc", 0.5),
    LossConfig("elastic-arc", "arc", 0.5, sigma=0.05),
    LossConfig("elastic-arc-plus", "arc", 0.5, sigma=0.0175, plus=True),
]


def toy_train_defaults():
    # s=16 for the 2-D toy problem; see README
    return TrainConfig(scale=16.0)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/toy"
    profile: str = "toy"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=toy_train_defaults)
    losses: list = field(default_factory=lambda: [LossConfig(**asdict(l)) for l in TOY_LOSSES])

    def __post_init__(self):
        if self.profile not in ("toy", "paper"):
            raise ConfigError(f"profile must be 'toy' or 'paper', got {self.profile!r}")
        names = [l.name for l in self.losses]
        if len(set(names)) != len(names):
            raise ConfigError(f"loss names must be unique: {names}")
        if not self.losses:
            raise ConfigError("at least one loss is required")

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, where="config"):
        d = dict(d)
        _check_keys(d, cls, where)
        kw = {k: d[k] for k in ("seed", "out", "profile") if k in d}
        if "dataset" in d:
            kw["dataset"] = _build(DatasetConfig, d["dataset"], f"{where}.dataset")
        if "model" in d:
            kw["model"] = _build(ModelConfig, d["model"], f"{where}.model")
        if "train" in d:
            kw["train"] = _build(TrainConfig, d["train"], f"{where}.train")
        if "losses" in d:
            if not isinstance(d["losses"], list):
                raise ConfigError(f"{where}.losses must be a list")
            kw["losses"] = [_build(LossConfig, l, f"{where}.losses[{i}]") for i, l in enumerate(d["losses"])]
        try:
            cfg = cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: {e}") from None
        for i, l in enumerate(cfg.losses):
            try:
                l.to_spec()
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{where}.losses[{i}]: {e}") from None
        return cfg

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_keys(d, cls, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")


def _build(cls, d, where):
    _check_keys(d, cls, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from None


def load_run_config(path):
    return RunConfig.from_dict(load_json(path), where=str(path))
