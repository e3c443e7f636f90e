"""Strict JSON round-tripping for run configs.

Unknown fields are rejected outright; defaults are filled in and echoed back,
so every emitted config is fully resolved.
"""

from __future__ import annotations

import dataclasses
import json

from .training import TrainConfig

_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def config_from_dict(doc: dict) -> TrainConfig:
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return TrainConfig(**doc)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    return config_from_dict(doc)


def dump_config(config: TrainConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
