"""Strict JSON experiment configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .correction import CorrectionParams
from .errors import ConfigError, ParseError
from .synthgen import GenConfig
from .trainer import TrainConfig

FORMAT_VERSION = "1"


def _check_value(name: str, value, default, where: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    elif default is None:
        # only warmup_end is optional
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}.{name}: unexpected value {value!r}")
    return value


def build_dataclass(cls, data, where: str):
    """Instantiate ``cls`` from a mapping, rejecting unknown keys and bad types."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = build_dataclass(type(default), value, f"{where}.{key}")
        else:
            kwargs[key] = _check_value(key, value, default, where)
    return cls(**kwargs)


@dataclass
class DatasetPaths:
    train: str = ""
    test: str = ""
    num_classes: int | None = None


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    gen: GenConfig | None = None
    dataset: DatasetPaths | None = None
    output_dir: str = "out"
    format_version: str = FORMAT_VERSION
    base_dir: Path = field(default=Path("."), repr=False)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def echo(self) -> dict:
        """Config as written to reports (no output location, so reruns elsewhere match)."""
        out: dict = {"format_version": self.format_version}
        if self.gen is not None:
            out["gen"] = dataclasses.asdict(self.gen)
        else:
            out["dataset"] = dataclasses.asdict(self.dataset)
        out["train"] = self.train.as_dict()
        return out


def parse_config(data, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"format_version", "gen", "dataset", "train", "output_dir"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"format_version must be {FORMAT_VERSION!r}, got {version!r}")
    if ("gen" in data) == ("dataset" in data):
        raise ConfigError("exactly one of 'gen' and 'dataset' must be given")
    cfg = ExperimentConfig(base_dir=base_dir)
    if "gen" in data:
        cfg.gen = build_dataclass(GenConfig, data["gen"], "gen")
        cfg.gen.validate()
    else:
        ds = data["dataset"]
        if not isinstance(ds, dict):
            raise ConfigError("dataset must be an object")
        unknown = sorted(set(ds) - {"train", "test", "num_classes"})
        if unknown:
            raise ConfigError(f"dataset: unknown keys {unknown}")
        if not isinstance(ds.get("train"), str) or not isinstance(ds.get("test"), str):
            raise ConfigError("dataset.train and dataset.test must be paths")
        nc = ds.get("num_classes")
        if nc is not None and (not isinstance(nc, int) or isinstance(nc, bool) or nc < 1):
            raise ConfigError("dataset.num_classes must be a positive integer")
        cfg.dataset = DatasetPaths(ds["train"], ds["test"], nc)
    cfg.train = build_dataclass(TrainConfig, data.get("train", {}), "train")
    if not isinstance(cfg.train.correction, CorrectionParams):
        raise ConfigError("train.correction must be an object")
    out = data.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir must be a string")
    cfg.output_dir = out
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from None
    return parse_config(data, path.parent)
