"""Run configuration loaded from a YAML file.

Top-level keys: ``seed``, ``out``, ``workers``, ``schema``, ``synth``,
``split``, ``model``, ``metrics``, ``mitigation`` (one block per method)
and ``scenarios``. Anything missing falls back to a default.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import synthgen
from .dataset import ColumnSpec, SchemaError, validate_schema
from .glm import GlmSpec
from .knn import DistanceSpec


class ConfigError(ValueError):
    pass


DEFAULT_MITIGATION = {
    "delete": {"thresholds": [0.1]},
    "corr": {"alpha": 1.0},
    "smote": {"st": 0.8, "ft": 0.8, "bins": [0, 250, 500, 750, 1000, 1500], "on_empty": "skip"},
    "eg": {"zeta": 1.0e5, "M": None, "eta_lr": 2.0, "T": 50, "B": 100.0},
    "redist": {"eta": 6.0, "zeta": 2000.0, "k": 5, "max_iter": 10000,
               "grid": {"etas": [2, 3, 4, 5, 6, 7, 8, 9, 10],
                        "zetas": [2500, 2000, 1500, 1000, 500, 100, 10, 1, 0.1]}},
    "avg": {"weights": None},
}
TOP_KEYS = {"seed", "out", "workers", "schema", "synth", "split", "model", "metrics", "mitigation",
            "scenarios"}


@dataclass(frozen=True)
class MetricConfig:
    grid_cc: int = 64
    grid_bc: int = 256
    js_bins: int = 100
    flip_k: int = 5
    flip_metric: str = "manhattan"
    flip_q: float = 1.0
    flip_features: tuple | None = None

    def distance(self, features) -> DistanceSpec:
        feats = self.flip_features or tuple(features)
        return DistanceSpec(self.flip_metric, tuple(feats), True, self.flip_q)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    workers: int = 1
    schema: tuple = synthgen.SCHEMA
    synth: Mapping = field(default_factory=dict)
    test_fraction: float = 0.2
    model: GlmSpec = GlmSpec()
    metrics: MetricConfig = MetricConfig()
    mitigation: Mapping = field(default_factory=lambda: copy.deepcopy(DEFAULT_MITIGATION))
    scenarios: tuple = ()

    def method(self, name: str) -> dict:
        if name not in self.mitigation:
            raise ConfigError(f"no mitigation block for {name!r}")
        return dict(self.mitigation[name] or {})

    def check(self) -> "RunConfig":
        names = {c.name for c in self.schema}
        for f in self.model.features:
            if f not in names:
                raise ConfigError(f"model.features references unknown column {f!r}")
        for f in self.metrics.flip_features or ():
            if f not in names:
                raise ConfigError(f"metrics.flip_features references unknown column {f!r}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("split.test_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(d: Mapping[str, Any]) -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    if "seed" in d and not isinstance(d["seed"], int):
        raise ConfigError("seed must be an integer")
    try:
        schema = tuple(ColumnSpec.from_dict(c) for c in d["schema"]) if "schema" in d else synthgen.SCHEMA
        validate_schema(schema)
        model = GlmSpec.from_dict(d.get("model") or {})
        m = dict(d.get("metrics") or {})
        if "flip_features" in m and m["flip_features"] is not None:
            m["flip_features"] = tuple(m["flip_features"])
        metrics = MetricConfig(**m)
        metrics.distance(("x",))
    except (SchemaError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    synth = dict(d.get("synth") or {})
    try:
        synthgen.SynthConfig.from_dict({**synth, "seed": d.get("seed", 0)}).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    mit = _merge(DEFAULT_MITIGATION, d.get("mitigation") or {})
    unknown = set(mit) - set(DEFAULT_MITIGATION)
    if unknown:
        raise ConfigError(f"unknown mitigation block(s): {sorted(unknown)}")
    split = dict(d.get("split") or {})
    return RunConfig(
        seed=int(d.get("seed", 0)), out=str(d.get("out", "out")), workers=int(d.get("workers", 1)),
        schema=schema, synth=synth, test_fraction=float(split.get("test_fraction", 0.2)), model=model,
        metrics=metrics, mitigation=mit, scenarios=tuple(d.get("scenarios") or ()),
    ).check()


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if d is not None and not isinstance(d, Mapping):
        raise ConfigError("config must be a mapping at top level")
    return from_dict(d or {})
