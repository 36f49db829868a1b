"""Experiment configuration: one ``key = value`` text file plus overrides.

Lines starting with ``#`` are comments. Values parse as booleans
(``true``/``false``), ``none``, integers, floats, or else plain strings.
Keys are the fields of :class:`ModelConfig` and :class:`TrainConfig` (one
shared ``seed``) plus a few pipeline settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from .corpus import DEFAULT_RATIOS, DEFAULT_VOCAB_CAP
from .model import ModelConfig
from .training import TrainConfig

MODEL_KEYS = tuple(f.name for f in fields(ModelConfig) if f.name not in ("vocab_size", "seed"))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")
PIPELINE_KEYS = ("seed", "vocab_cap", "beam", "split")


class ConfigError(ValueError):
    pass


def parse_value(raw: str):
    s = raw.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in MODEL_KEYS + TRAIN_KEYS + PIPELINE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = parse_value(value)
    return out


def parse_split(value) -> tuple:
    if isinstance(value, tuple):
        return value
    parts = [Fraction(p) for p in str(value).split(":")]
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) == 0:
        raise ConfigError(f"split must look like a:b:c, got {value!r}")
    total = sum(parts)
    return tuple(p / total for p in parts)


@dataclass
class Experiment:
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "Experiment":
        values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
        for k, v in (overrides or {}).items():
            if v is not None:
                if k not in MODEL_KEYS + TRAIN_KEYS + PIPELINE_KEYS:
                    raise ConfigError(f"unknown key {k!r}")
                values[k] = v
        return cls(values)

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    @property
    def vocab_cap(self) -> int:
        return int(self.values.get("vocab_cap", DEFAULT_VOCAB_CAP))

    @property
    def beam(self) -> int:
        return int(self.values.get("beam", 5))

    @property
    def split(self) -> tuple:
        return parse_split(self.values["split"]) if "split" in self.values else DEFAULT_RATIOS

    def model_config(self, vocab_size: int) -> ModelConfig:
        kw = {k: v for k, v in self.values.items() if k in MODEL_KEYS}
        try:
            return ModelConfig(vocab_size=vocab_size, seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        kw = {k: v for k, v in self.values.items() if k in TRAIN_KEYS}
        try:
            return TrainConfig(seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        return "".join(f"{k} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}\n"
                       for k, v in sorted(self.values.items()))
