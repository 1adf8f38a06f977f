"""Experiment configuration: one nested YAML/JSON document, validated before any run.

Layout::

    run_id: demo
    output_dir: runs          # overridden by $FAIRDD_OUTPUT_ROOT
    dataset:                  # synthetic generator fields, or train_csv/test_csv
      num_classes: 3
      seed: 0
    train:                    # protocol and optimiser fields
      stage_order: [1, 0]
      epochs_per_stage: 20
    weights: {alpha: 1.0, beta: 1.0, tau: 0.07, T: 2.0}
    mixup: {theta: 0.8, enabled: true}
    fate: {lambda: 1.0}

Every section is optional; unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from fairdd.augment import MixupConfig
from fairdd.data import Dataset, DatasetSpec, generate, load_dataset
from fairdd.losses import LossWeights
from fairdd.trainer import TrainConfig

OUTPUT_ROOT_ENV = "FAIRDD_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSource:
    spec: DatasetSpec = field(default_factory=DatasetSpec)
    train_csv: str | None = None
    test_csv: str | None = None

    def load(self) -> Dataset:
        if self.train_csv is None:
            return generate(self.spec)
        return load_dataset(self.train_csv, self.test_csv, self.spec.num_classes, self.spec.seed)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self.spec)
        if self.train_csv is not None:
            d["train_csv"] = self.train_csv
            d["test_csv"] = self.test_csv
        return d


@dataclass
class ExperimentConfig:
    run_id: str = "default"
    output_dir: str = "runs"
    dataset: DataSource = field(default_factory=DataSource)
    train: TrainConfig = field(default_factory=TrainConfig)
    fate_lambda: float = 1.0

    @property
    def output_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.output_dir)

    def run_root(self) -> Path:
        return self.output_root / self.run_id

    def as_dict(self) -> dict:
        """Snapshot in the same schema :func:`parse_config` accepts."""
        train = self.train.as_dict()
        weights = train.pop("weights")
        mixup = train.pop("mixup")
        return {
            "run_id": self.run_id,
            "output_dir": self.output_dir,
            "dataset": self.dataset.as_dict(),
            "train": train,
            "weights": weights,
            "mixup": mixup,
            "fate": {"lambda": self.fate_lambda},
        }

    def replace_train(self, **changes) -> "ExperimentConfig":
        d = self.as_dict()
        for k, v in changes.items():
            if k in ("weights", "mixup"):
                d[k].update(v)
            else:
                d["train"][k] = v
        return parse_config(d)


# validation ----------------------------------------------------------------


_TOP_KEYS = {"run_id", "output_dir", "dataset", "train", "weights", "mixup", "fate"}
_CSV_KEYS = {"train_csv", "test_csv"}


def _type_ok(value, hint) -> bool:
    origin = typing.get_origin(hint)
    if hint is typing.Any:
        return True
    if origin in (typing.Union, types.UnionType):
        return any(_type_ok(value, h) for h in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if origin in (list, tuple):
        args = [a for a in typing.get_args(hint) if a is not Ellipsis]
        return isinstance(value, (list, tuple)) and all(_type_ok(v, args[0]) for v in value)
    return True


def _checked_keys(cls, raw, name: str, skip=()) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}; allowed {sorted(allowed)}")
    for k, v in raw.items():
        if not _type_ok(v, hints[k]):
            raise ConfigError(f"{name}.{k}: value {v!r} does not match type {hints[k]}")
    return raw


def _section(cls, raw, name: str):
    raw = _checked_keys(cls, raw, name)
    try:
        return cls(**raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed {sorted(_TOP_KEYS)}")
    for key in ("run_id", "output_dir"):
        if key in raw and not isinstance(raw[key], str):
            raise ConfigError(f"{key} must be a string")

    ds_raw = dict(raw.get("dataset") or {})
    csv = {k: ds_raw.pop(k) for k in list(ds_raw) if k in _CSV_KEYS}
    for k, v in csv.items():
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"dataset.{k} must be a path string")
    if csv.get("test_csv") and not csv.get("train_csv"):
        raise ConfigError("dataset.test_csv given without dataset.train_csv")
    source = DataSource(_section(DatasetSpec, ds_raw, "dataset"), csv.get("train_csv"), csv.get("test_csv"))

    weights = _section(LossWeights, raw.get("weights"), "weights")
    mixup = _section(MixupConfig, raw.get("mixup"), "mixup")
    train_raw = _checked_keys(TrainConfig, raw.get("train"), "train", skip=("weights", "mixup"))
    try:
        train = TrainConfig(**train_raw, weights=weights, mixup=mixup)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    fate_raw = raw.get("fate") or {}
    if not isinstance(fate_raw, dict) or set(fate_raw) - {"lambda"}:
        raise ConfigError(f"fate: only the key 'lambda' is allowed, got {fate_raw!r}")
    lam = fate_raw.get("lambda", 1.0)
    if not _type_ok(lam, float) or lam < 0:
        raise ConfigError(f"fate.lambda must be a nonnegative number, got {lam!r}")

    return ExperimentConfig(raw.get("run_id", "default"), raw.get("output_dir", "runs"),
                            source, train, float(lam))


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    return parse_config(raw)
