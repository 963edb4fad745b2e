from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# dotted keys accepted in config files, mapped to flat field names
_ALIASES = {
    "dss.enabled": "dss_enabled",
    "dss.window_size": "window_size",
    "dss.lambda": "lam",
    "fad.enabled": "fad_enabled",
    "lambda": "lam",
}


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 64
    epochs: int = 50
    weight_decay: float = 0.0005
    dropout: float = 0.5
    beam_size: int = 5
    t_max: int = 30
    K: int = 8
    d_h: int = 512
    n_heads: int = 8
    gamma: float = 0.015
    delta: float = 0.0015
    lam: float = 0.07
    window_size: int = 5
    fad_enabled: bool = True
    dss_enabled: bool = True
    seed: int = 0
    grad_clip: float = 5.0
    min_count: int = 1

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0 or self.lam < 0:
            raise ValueError("learning_rate, weight_decay and lambda must be non-negative")
        if min(self.batch_size, self.epochs, self.beam_size, self.K, self.d_h, self.n_heads) < 1:
            raise ValueError("sizes and counts must be positive")
        if self.d_h % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide d_h={self.d_h}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.t_max < 3:
            raise ValueError("t_max must be >= 3")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be an odd integer >= 3")

    @classmethod
    def from_mapping(cls, data: dict) -> "TrainConfig":
        flat = _flatten(data)
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in flat.items():
            name = _ALIASES.get(key, key)
            if name not in names:
                raise ValueError(f"unknown config key: {key}")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                return cls.from_mapping(tomllib.load(fh))
        return cls.from_mapping(json.loads(path.read_text()))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def desk_config(**overrides) -> TrainConfig:
    """Small configuration used for the synthetic experiments and tests."""
    base = dict(d_h=64, n_heads=4, t_max=12, K=4, batch_size=64, epochs=30)
    base.update(overrides)
    return TrainConfig(**base)
