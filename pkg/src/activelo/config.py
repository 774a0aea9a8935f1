"""Run configuration: one JSON or TOML file, overridable from the command line."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .ais import AisConfig, AugmentationConfig
from .diversity import DiversityWeights, ItssConfig
from .trajgraph import SegmentParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentSection:
    window: float = 2.0
    threshold_deg: float = 15.0
    min_gap: int | None = None

    def params(self) -> SegmentParams:
        return SegmentParams(self.window, float(np.deg2rad(self.threshold_deg)), self.min_gap)


@dataclass(frozen=True)
class AnalyzeSection:
    eps: float = 0.3
    stride: int = 1
    segment: SegmentSection = field(default_factory=SegmentSection)


@dataclass(frozen=True)
class ItssSection:
    u: int = 4
    bins_outlier: int = 3
    bins_speed: int = 3
    normalize: bool = True
    weather: str | None = "general"
    weights: DiversityWeights = field(default_factory=DiversityWeights)

    def config(self) -> ItssConfig:
        return ItssConfig(self.u, self.bins_outlier, self.bins_speed, self.weights, self.normalize)


@dataclass(frozen=True)
class AisSection:
    h: int = 5
    iter: int = 6
    srl_weight: float = 0.5
    pil_weight: float = 0.5
    normalize: bool = True
    stride: int = 1
    gate: float = 1.0
    k_neighbors: int = 10
    voxel: float | None = 0.3
    c: int = 8
    aug_alpha: float = 0.1
    floor_trans: float = 0.02
    floor_rot: float = 0.005
    predictor: str = "icp"
    initial: tuple[str, ...] | None = None

    def config(self, seed: int, workers: int = 1) -> AisConfig:
        aug = AugmentationConfig(self.c, self.aug_alpha, self.floor_trans, self.floor_rot, seed)
        return AisConfig(
            self.h, self.iter, self.srl_weight, self.pil_weight, self.normalize, self.stride,
            self.gate, self.k_neighbors, self.voxel, workers, aug,
        )


@dataclass(frozen=True)
class ReportSection:
    total: int | None = None  # default: pool size
    e_init: int = 15
    e_round: int = 5
    e_full: int = 50
    train_rounds: int | None = None  # default: admission rounds run
    infer_rounds: int | None = None  # default: admission rounds run - 1


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    seed: int
    output: str = "out"
    workers: int = 1
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)
    itss: ItssSection = field(default_factory=ItssSection)
    ais: AisSection = field(default_factory=AisSection)
    report: ReportSection = field(default_factory=ReportSection)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def snapshot(self) -> dict:
        """Everything needed to rerun; the output directory is where the snapshot lives."""
        d = self.to_dict()
        d.pop("output")
        return d


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a table, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kw = {}
    for name, value in data.items():
        sub = _DATACLASS_FIELDS.get((cls, name))
        if sub is not None:
            kw[name] = _build(sub, value, f"{where}.{name}" if where else name)
        elif name == "initial" and value is not None:
            kw[name] = tuple(str(v) for v in value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


_DATACLASS_FIELDS = {
    (RunConfig, "analyze"): AnalyzeSection,
    (RunConfig, "itss"): ItssSection,
    (RunConfig, "ais"): AisSection,
    (RunConfig, "report"): ReportSection,
    (AnalyzeSection, "segment"): SegmentSection,
    (ItssSection, "weights"): DiversityWeights,
}


def parse_config(data: dict, base: Path | None = None) -> RunConfig:
    """Validate a config mapping; relative paths resolve against ``base``."""
    if "seed" not in data:
        raise ConfigError("seed is mandatory")
    if "manifest" not in data:
        raise ConfigError("manifest is mandatory")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {data['seed']!r}")
    cfg = _build(RunConfig, data, "")
    if base is not None:
        man = Path(cfg.manifest)
        out = Path(cfg.output)
        cfg = replace(
            cfg,
            manifest=str(man if man.is_absolute() else base / man),
            output=str(out if out.is_absolute() else base / out),
        )
    if not Path(cfg.manifest).is_file():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    return cfg


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` and apply dotted-key ``overrides`` such as ``{"ais.h": 2}``."""
    data = read_config_file(path)
    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)
    return parse_config(data, Path(path).resolve().parent)


def set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a table")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value

