"""Run configuration and its flat ``key = value`` file format.

Every key is unique across the nested dataclasses, so a config file is a
plain list of assignments. Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict

from .types import Hyperparams, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    text_dim: int = 16
    vision_dim: int = 16
    vision_layers: int = 4
    context_len: int = 8
    decoder_layers: int = 2
    decoder_heads: int = 1
    ffn_mult: int = 2
    text_seed: int = 0
    image_seed: int = 0
    image_feature_scale: float = 16.0
    fusion: str = "weighted_sum"
    ami_text_source: str = "decoder"
    omi_projection: str = "shared"
    separate_object_encoder: bool = False

    def __post_init__(self):
        if self.context_len < 0:
            raise ValidationError("context_len must be >= 0")
        if self.text_dim % self.decoder_heads:
            raise ValidationError("text_dim must be divisible by decoder_heads")
        if self.fusion != "weighted_sum":
            raise ValidationError(f"unknown fusion strategy {self.fusion!r}")
        if self.ami_text_source not in ("decoder", "encoder"):
            raise ValidationError("ami_text_source must be 'decoder' or 'encoder'")
        if self.omi_projection not in ("shared", "dedicated"):
            raise ValidationError("omi_projection must be 'shared' or 'dedicated'")


@dataclass(frozen=True)
class TrainConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    model: ModelConfig = field(default_factory=ModelConfig)
    enable_ami: bool = True
    enable_omi: bool = True
    momentum: float = 0.0
    grad_accum: int = 1
    eval_interval: int = 50
    dtype: str = "float32"
    data_root: str = ""
    split: str = "seen"
    one_shot: bool = True
    checkpoint_path: str = ""

    def __post_init__(self):
        if self.eval_interval < 1:
            raise ValidationError("eval_interval must be >= 1")
        if self.grad_accum < 1:
            raise ValidationError("grad_accum must be >= 1")
        if self.momentum < 0:
            raise ValidationError("momentum must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("dtype must be float32 or float64")
        if self.split not in ("seen", "unseen"):
            raise ValidationError("split must be 'seen' or 'unseen'")

    def with_overrides(self, **kw) -> "TrainConfig":
        """Replace any flat key, e.g. ``cfg.with_overrides(tau1=0.05, text_dim=8)``."""
        flat = to_flat(self)
        unknown = set(kw) - set(flat)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        flat.update(kw)
        return from_flat(flat)


_SECTIONS = {"hyper": Hyperparams, "model": ModelConfig}


def to_flat(cfg: TrainConfig) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            out.update(dataclasses.asdict(val))
        else:
            out[f.name] = val
    return out


def _types() -> Dict[str, type]:
    types = {}
    for cls in (Hyperparams, ModelConfig, TrainConfig):
        for f in fields(cls):
            if f.name not in _SECTIONS:
                types[f.name] = type(getattr(cls(), f.name))
    return types


def _coerce(key: str, raw: Any, typ: type):
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    if typ is bool:
        if isinstance(raw, str):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
        raise ValidationError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        return typ(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def from_flat(flat: Dict[str, Any]) -> TrainConfig:
    types = _types()
    unknown = set(flat) - set(types)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    vals = {k: _coerce(k, v, types[k]) for k, v in flat.items()}
    parts = {}
    for name, cls in _SECTIONS.items():
        parts[name] = cls(**{f.name: vals.pop(f.name) for f in fields(cls) if f.name in vals})
    return TrainConfig(**parts, **vals)


def parse_config_text(text: str) -> TrainConfig:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in flat:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = val
    return from_flat(flat)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in to_flat(cfg).items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


__all__ = [
    "ModelConfig", "TrainConfig", "to_flat", "from_flat", "parse_config_text",
    "load_config", "dump_config", "save_config",
]
