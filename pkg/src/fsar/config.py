"""Model configuration: one flat dataclass mirrored by the JSON config file."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError
from .fusion import FUSION_STRATEGIES
from .semantic import CONSTRAINT_MODES


@dataclass
class ModelConfig:
    # episode protocol
    frames: int = 8  # T
    channels: int = 64  # C
    way: int = 5  # N
    shot: int = 1  # K
    queries: int = 4  # M per class
    templates: int = 16  # R

    # architecture
    encoder_depth: int = 1
    encoder_heads: int = 8
    mfe_reduction: int = 4
    pg_depth: int = 2

    # distances
    gamma: float = 0.1
    bidirectional: bool = True
    lambda1: float = 1.0
    lambda2: float = 0.5

    # loss
    lambda3: float = 0.001
    lambda4: float = 0.001

    # optimization
    lr: float = 1e-5
    weight_decay: float = 5e-5
    accumulation: int = 16
    train_episodes: int = 2000
    eval_episodes: int = 500

    # component switches
    use_hsmr: bool = True
    use_spm: bool = True
    use_padm: bool = True
    fusion: str = "concat+sum+gate"
    constraint: str = "both"
    gate_on_inputs: bool = False
    hsmr_pre_sf_consistency: bool = False
    padm_transductive: bool = True

    # numerics / reproducibility
    dtype: str = "float32"
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.frames < 2:
            raise ConfigError(f"frames must be >= 2, got {self.frames}")
        if min(self.channels, self.way, self.shot, self.queries, self.templates) < 1:
            raise ConfigError("channels, way, shot, queries, templates must be positive")
        if self.channels % self.encoder_heads != 0:
            raise ConfigError(
                f"channels {self.channels} not divisible by encoder heads {self.encoder_heads}"
            )
        if self.mfe_reduction < 1 or self.channels % self.mfe_reduction != 0:
            raise ConfigError(
                f"mfe_reduction {self.mfe_reduction} must divide channels {self.channels}"
            )
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.fusion not in FUSION_STRATEGIES:
            raise ConfigError(f"fusion must be one of {FUSION_STRATEGIES}, got {self.fusion!r}")
        if self.constraint not in CONSTRAINT_MODES:
            raise ConfigError(
                f"constraint must be one of {CONSTRAINT_MODES}, got {self.constraint!r}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.accumulation < 1:
            raise ConfigError(f"accumulation must be >= 1, got {self.accumulation}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def with_overrides(self, overrides: dict) -> "ModelConfig":
        merged = self.to_dict()
        known = set(merged)
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        return ModelConfig.from_dict(merged)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def parse_override(text: str) -> tuple[str, object]:
    """Parse one ``key=value`` override; values go through JSON first."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: str | None, overrides: dict | None = None) -> ModelConfig:
    cfg = ModelConfig()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        cfg = ModelConfig.from_dict(raw)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
