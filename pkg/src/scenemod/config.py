"""Flat ``key = value`` config files for model and training settings.

Keys are ModelConfig or TrainConfig field names.  Lines starting with ``#``
and blank lines are ignored.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = _value(val)
    return out


def split_config(values: dict) -> tuple[dict, dict]:
    """Route keys to ModelConfig / TrainConfig keyword dicts."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for k, v in values.items():
        if k in model_keys:
            model_kw[k] = v
        elif k in train_keys:
            train_kw[k] = v
        else:
            raise ConfigError(f"unknown config key {k!r}")
    return model_kw, train_kw


def load_config(path) -> tuple[dict, dict]:
    return split_config(parse_config(Path(path).read_text(encoding="utf-8")))
