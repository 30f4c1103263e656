"""Training configuration and its flat TOML representation.

Config files use the row names of published hyperparameter tables, e.g.::

    "Embedding size" = 33
    "Base loss" = "SSM"
    "Neg. samples" = 37
    "LR" = 0.0226839
    "# User prototypes" = 84
    lambda_L1 = 0.00318446

snake_case field names are accepted as well.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .losses import BASE_KINDS, RegWeights

# file key -> TrainConfig field
TABLE_KEYS = {
    "Embedding size": "dim",
    "lambda_L2": "lambda_l2",
    "Base loss": "base_loss",
    "Sampling": "sampling",
    "Neg. samples": "n_neg",
    "Batch size": "batch_size",
    "Optimizer": "optimizer",
    "LR": "learning_rate",
    "# User prototypes": "n_user_prototypes",
    "# Item prototypes": "n_item_prototypes",
    "lambda_1": "lambda_1",
    "lambda_2": "lambda_2",
    "lambda_3": "lambda_3",
    "lambda_4": "lambda_4",
    "lambda_L1": "lambda_l1",
    "L2 squared": "l2_squared",
    "Max epochs": "max_epochs",
    "Patience": "patience",
    "Seed": "seed",
}
FIELD_KEYS = {v: k for k, v in TABLE_KEYS.items()}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    base_loss: str = "ssm"
    sampling: str = "uniform"
    n_neg: int = 10
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    n_user_prototypes: int = 8
    n_item_prototypes: int = 8
    lambda_l2: float = 0.0
    lambda_1: float = 0.0
    lambda_2: float = 0.0
    lambda_3: float = 0.0
    lambda_4: float = 0.0
    lambda_l1: float = 0.0
    l2_squared: bool = True
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        self.base_loss = str(self.base_loss).lower()
        self.sampling = str(self.sampling).lower()
        self.optimizer = str(self.optimizer).lower()
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.n_neg >= 1, "n_neg must be >= 1"),
            (self.dim >= 1, "embedding size must be >= 1"),
            (self.n_user_prototypes >= 1 and self.n_item_prototypes >= 1,
             "prototype counts must be >= 1"),
            (self.base_loss in BASE_KINDS, f"base loss must be one of {BASE_KINDS}"),
            (self.sampling in ("uniform", "popular"), "sampling must be uniform or popular"),
            (self.optimizer in ("adam", "adagrad"), "optimizer must be adam or adagrad"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        self.reg_weights()

    def reg_weights(self) -> RegWeights:
        try:
            return RegWeights(self.lambda_l2, self.lambda_1, self.lambda_2, self.lambda_3,
                              self.lambda_4, self.lambda_l1, self.l2_squared)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        names = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            name = TABLE_KEYS.get(key, key)
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = value
        for name in ("dim", "n_neg", "batch_size", "n_user_prototypes", "n_item_prototypes",
                     "max_epochs", "patience", "seed"):
            if name in kwargs:
                kwargs[name] = _as_int(name, kwargs[name])
        for name in ("learning_rate", "lambda_l2", "lambda_1", "lambda_2", "lambda_3",
                     "lambda_4", "lambda_l1"):
            if name in kwargs:
                kwargs[name] = float(kwargs[name])
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {FIELD_KEYS.get(k, k): v for k, v in asdict(self).items()}

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


def _as_int(name, value) -> int:
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(value)


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path) -> TrainConfig:
    return TrainConfig.from_mapping(load_toml(path))


def dump_config(config: TrainConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(config.to_mapping()), encoding="utf-8")
