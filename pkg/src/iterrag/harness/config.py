"""Declarative experiment configuration (YAML or JSON)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..corpus import DEFAULT_OVERLAP, DEFAULT_WINDOW
from ..diagnostics import DETERMINISTIC, JUDGE, Thresholds
from ..gateway import ModelConfig
from ..results import REGIMES

AUDITOR_MODES = (DETERMINISTIC, JUDGE, "both")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    corpus: str = ""
    dataset: str = ""
    index_dir: str = "index"
    output_dir: str = "out"
    window: int = DEFAULT_WINDOW
    overlap: int = DEFAULT_OVERLAP
    k: int = 10
    budget: int = 5
    models: list[ModelConfig] = field(default_factory=list)
    judge: ModelConfig | None = None
    embedder: ModelConfig = field(default_factory=lambda: ModelConfig("hashing-512", adapter="hashing", dim=512))
    auditor: ModelConfig | None = None
    auditor_mode: str = DETERMINISTIC
    regimes: list[str] = field(default_factory=lambda: list(REGIMES))
    workers: int = 4
    max_attempts: int = 5
    prices: str | None = None
    coverage_threshold: float = 0.8
    sufficiency_threshold: float = 0.6
    deterministic: bool = False
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.window <= self.overlap:
            raise ConfigError(f"window ({self.window}) must exceed overlap ({self.overlap})")
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.auditor_mode not in AUDITOR_MODES:
            raise ConfigError(f"auditor_mode must be one of {AUDITOR_MODES}")
        bad = [r for r in self.regimes if r not in REGIMES]
        if bad or not self.regimes:
            raise ConfigError(f"unknown regimes {bad}" if bad else "at least one regime required")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate model_id in roster")
        try:
            Thresholds(self.coverage_threshold, self.sufficiency_threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.coverage_threshold, self.sufficiency_threshold)

    @property
    def judge_cfg(self) -> ModelConfig:
        if self.judge is None:
            raise ConfigError("no judge model configured")
        return self.judge

    @property
    def auditor_cfg(self) -> ModelConfig:
        return self.auditor or self.judge_cfg

    def path(self, value: str | None) -> Path | None:
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def model(self, model_id: str) -> ModelConfig:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise ConfigError(f"model {model_id!r} is not in the roster")

    def all_model_configs(self) -> list[ModelConfig]:
        out = list(self.models)
        for extra in (self.judge, self.auditor, self.embedder):
            if extra is not None and extra.model_id not in {m.model_id for m in out}:
                out.append(extra)
        return out

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, ModelConfig):
                v = v.to_dict()
            elif f.name == "models":
                v = [m.to_dict() for m in v]
            d[f.name] = v
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            kw["models"] = [ModelConfig.from_dict(m) for m in d.get("models", [])]
            for key in ("judge", "auditor", "embedder"):
                if d.get(key) is not None:
                    kw[key] = ModelConfig.from_dict(d[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc
        kw["base_dir"] = str(base_dir)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        text = p.read_text(encoding="utf-8")
        try:
            data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"{p}: cannot parse config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: config must be a mapping")
        return cls.from_dict(data, base_dir=p.parent)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "models" in kw:
            wanted = kw.pop("models")
            kw["models"] = [self.model(m) for m in wanted]
        cfg = replace(self, **kw)
        return cfg
