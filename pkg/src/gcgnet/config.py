"""Run configuration: one YAML document with data/model/train/experiment sections."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from gcgnet.baselines import BaselineConfig
from gcgnet.data import Dataset, MaskSpec, SynthSpec, load_csv, synth_generate
from gcgnet.model import ModelConfig
from gcgnet.train import TrainConfig


class ConfigError(ValueError):
    pass


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


@dataclass
class DataSection:
    csv: str | None = None
    synth: dict | None = None
    synth_seed: int = 0
    endo: list[str] = field(default_factory=list)
    exo: list[str] = field(default_factory=list)
    split: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    stride: int = 1

    def load(self, base: Path | None = None) -> Dataset:
        if (self.csv is None) == (self.synth is None):
            raise ConfigError("data needs exactly one of 'csv' or 'synth'")
        if self.synth is not None:
            _check_keys("data.synth", self.synth, {f.name for f in fields(SynthSpec)})
            return synth_generate(SynthSpec(**self.synth), self.synth_seed)
        if not self.endo or not self.exo:
            raise ConfigError("csv data needs non-empty 'endo' and 'exo' column lists")
        path = Path(self.csv)
        if base is not None and not path.is_absolute() and not path.exists():
            path = base / path
        return load_csv(path, self.endo, self.exo)


@dataclass
class ExperimentSection:
    kind: str = "gcgnet"
    variant: str = "full"
    future_exo: bool = True
    masks: list[str] = field(default_factory=list)
    original_units: bool = False

    def mask_specs(self) -> list[MaskSpec]:
        return [MaskSpec.parse(m) for m in self.masks]


@dataclass
class RunConfig:
    data: DataSection
    model: dict
    train: TrainConfig
    experiment: ExperimentSection
    output_dir: str = "runs/default"

    def model_config(self, N: int, D: int):
        """Build the model config for a dataset with ``N`` endogenous and ``D`` exogenous channels."""
        params = dict(self.model)
        for key, value in (("N", N), ("D", D)):
            if key in params and params[key] != value:
                raise ConfigError(f"model.{key}={params[key]} but data provides {value}")
            params[key] = value
        params["future_exo_available"] = self.experiment.future_exo
        if self.experiment.kind == "gcgnet":
            params["variant"] = self.experiment.variant
            try:
                return ModelConfig.from_dict(params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        if self.experiment.kind in ("linear", "fusion"):
            allowed = {f.name for f in fields(BaselineConfig)}
            _check_keys("model", params, allowed)
            return BaselineConfig(**params)
        raise ConfigError(f"unknown experiment.kind {self.experiment.kind!r}")

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "model": dict(self.model),
            "train": asdict(self.train),
            "experiment": asdict(self.experiment),
            "output_dir": self.output_dir,
        }


SECTIONS = {"data", "model", "train", "experiment", "output_dir"}


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("top level", raw, SECTIONS)
    data_raw = raw.get("data") or {}
    _check_keys("data", data_raw, {f.name for f in fields(DataSection)})
    train_raw = raw.get("train") or {}
    _check_keys("train", train_raw, {f.name for f in fields(TrainConfig)})
    exp_raw = raw.get("experiment") or {}
    _check_keys("experiment", exp_raw, {f.name for f in fields(ExperimentSection)})
    model_raw = raw.get("model") or {}
    if not isinstance(model_raw, dict):
        raise ConfigError("model section must be a mapping")
    allowed_model = {f.name for f in fields(ModelConfig)} | {f.name for f in fields(BaselineConfig)}
    _check_keys("model", model_raw, allowed_model - {"variant", "future_exo_available"})
    try:
        cfg = RunConfig(DataSection(**data_raw), dict(model_raw), TrainConfig(**train_raw),
                        ExperimentSection(**exp_raw), str(raw.get("output_dir", "runs/default")))
        cfg.experiment.mask_specs()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
