"""Experiment configuration: flat dotted keys in a YAML file, overridable from the CLI."""

from __future__ import annotations

import json
import os
from pathlib import Path

import yaml

DEFAULTS = {
    "seed": 0,
    "out_dir": "experiment",
    "jobs": 1,
    # inputs: either an image manifest or a precomputed feature file
    "data.manifest": None,
    "data.features": None,
    "features.provider": "blockmean16",
    "protocol.folds": 6,
    "protocol.test_fold": 1,
    "protocol.gallery_per_subject": 1,   # 0 keeps every VIS image of a test subject
    "mining.window": 60,
    "mining.stride": 12,
    "mining.crop": 40,
    "mining.sum_threshold": 1.0,
    "mining.min_threshold": 0.4,
    "mining.target_total": None,
    "halluc.epochs": 10,
    "halluc.batch": 64,
    "halluc.max_iters": None,
    "halluc.lr": 1e-5,
    "halluc.shared_prelu": False,
    "halluc.weights_dir": None,          # load Y.npz / Cb.npz / Cr.npz instead of training
    "halluc.alpha": 0.6,
    "halluc.sigma": 1.0,
    "halluc.blend_passes": 2,
    "embed.pca_dim": 1024,
    "ccp.max_outer_iters": 50,
    "ccp.outer_tolerance": 1e-6,
    "ccp.inner_max_iters": 100,
    "ccp.inner_step": 1e-3,
    "ccp.inner_tolerance": 1e-8,
    "ablation.hallucination": True,
    "ablation.lowrank": True,
}

_PATH_KEYS = ("data.manifest", "data.features", "halluc.weights_dir")


class ConfigError(ValueError):
    """Configuration is invalid (exit code 2)."""


def _flatten(mapping, prefix=""):
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot use {value!r} ({exc})") from exc


class Config:
    """Validated flat configuration. Access values as ``cfg["mining.stride"]``."""

    def __init__(self, values: dict | None = None, base_dir: str | os.PathLike = "."):
        values = _flatten(values or {})
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        self.base_dir = Path(base_dir)
        self.values = dict(DEFAULTS)
        for key, value in values.items():
            self.values[key] = _coerce(key, value)
        for key in _PATH_KEYS + ("out_dir",):
            if self.values[key] is not None:
                p = Path(self.values[key])
                self.values[key] = str(p if p.is_absolute() else self.base_dir / p)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path: str | os.PathLike, overrides: dict | None = None) -> "Config":
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping of dotted keys")
        merged = _flatten(loaded)
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(merged, base_dir=path.parent)

    def with_overrides(self, **overrides) -> "Config":
        values = {k: v for k, v in self.values.items()}
        values.update(overrides)
        cfg = Config.__new__(Config)
        cfg.base_dir = self.base_dir
        cfg.values = {k: _coerce(k, v) for k, v in values.items()}
        return cfg

    def subtree(self, *prefixes) -> dict:
        """Keys under any of the given prefixes; used to key cached artifacts."""
        return {k: v for k, v in sorted(self.values.items())
                if any(k == p or k.startswith(p + ".") for p in prefixes)}

    def validate(self) -> "Config":
        v = self.values
        if (v["data.manifest"] is None) == (v["data.features"] is None):
            raise ConfigError("set exactly one of data.manifest and data.features")
        for key in _PATH_KEYS:
            if v[key] is not None and not Path(v[key]).exists():
                raise ConfigError(f"{key}: {v[key]} does not exist")
        if v["protocol.folds"] < 2:
            raise ConfigError("protocol.folds must be at least 2")
        if not 1 <= v["protocol.test_fold"] <= v["protocol.folds"]:
            raise ConfigError("protocol.test_fold must lie in 1..protocol.folds")
        if v["protocol.gallery_per_subject"] < 0:
            raise ConfigError("protocol.gallery_per_subject must be >= 0")
        if not 0.0 <= v["halluc.alpha"] <= 1.0:
            raise ConfigError("halluc.alpha must lie in [0, 1]")
        if v["halluc.sigma"] <= 0:
            raise ConfigError("halluc.sigma must be positive")
        if v["halluc.blend_passes"] not in (1, 2):
            raise ConfigError("halluc.blend_passes must be 1 or 2")
        if v["halluc.epochs"] < 0 or v["halluc.batch"] < 1:
            raise ConfigError("halluc.epochs must be >= 0 and halluc.batch >= 1")
        if v["embed.pca_dim"] < 1:
            raise ConfigError("embed.pca_dim must be positive")
        if v["jobs"] < 1:
            raise ConfigError("jobs must be positive")
        from .features import PROVIDERS
        if v["features.provider"] not in PROVIDERS:
            raise ConfigError(f"unknown feature provider {v['features.provider']!r}")
        return self

    def dump(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=1)
