"""Scenario evaluation on a shared test set and fairness/performance trade-off reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import glm, inproc, post, pre
from .dataset import BinningSpec, Portfolio
from .glm import GlmSpec
from .knn import DistanceSpec
from .metrics import fairness_panel
from .pareto import dominated_mask

log = logging.getLogger(__name__)

STAGES = ("reference", "pre", "in", "post")
METHODS = {
    "reference": "reference", "with_s": "reference", "delete": "pre", "corr": "pre", "smote": "pre",
    "eg": "in", "redist": "post", "avg": "post",
}
AXES = ("hgr", "ks_stat", "js_divergence", "abs_kendall_tau", "mean_ratio_gap")
REPORT_VERSION = 1


@dataclass(frozen=True)
class MitigationScenario:
    id: str
    description: str
    stage: str
    fairness: float | None
    performance: float | None
    lr: float | None
    extras: Mapping[str, float] = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.error is None:
            if not 0 <= self.fairness <= 1:
                raise ValueError("fairness must lie in [0, 1]")
            if not self.performance >= 0:
                raise ValueError("performance must be non-negative")

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {"v": REPORT_VERSION, "id": self.id, "description": self.description, "stage": self.stage,
                "fairness": self.fairness, "performance": self.performance, "lr": self.lr,
                "extras": dict(sorted(self.extras.items())), "error": self.error}

    @classmethod
    def from_dict(cls, d) -> "MitigationScenario":
        if d.get("v") != REPORT_VERSION:
            raise ValueError(f"unsupported scenario record version {d.get('v')!r}")
        return cls(str(d["id"]), str(d.get("description", "")), d["stage"], d["fairness"],
                   d["performance"], d["lr"], dict(d.get("extras", {})), d.get("error"))


@dataclass(frozen=True)
class Pipeline:
    """A mitigation method, its parameters and the pricing model it feeds."""

    id: str
    method: str
    model: GlmSpec = GlmSpec()
    params: Mapping = field(default_factory=dict)
    description: str = ""
    axis: str = "hgr"
    flip: DistanceSpec | None = None
    flip_k: int = 5
    metric_opts: Mapping = field(default_factory=dict)  # js_bins, grid_cc, grid_bc

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid: {sorted(METHODS)}")
        if self.axis not in AXES:
            raise ValueError(f"unknown fairness axis {self.axis!r}; valid: {list(AXES)}")

    @property
    def stage(self) -> str:
        return METHODS[self.method]


@dataclass(frozen=True)
class PipelineRun:
    """Test-set predictions plus method artefacts (augmented data, reports)."""

    predictions: np.ndarray
    artifacts: Mapping = field(default_factory=dict)


def _base(spec: GlmSpec) -> GlmSpec:
    return spec.replace(include_sensitive=False)


def run_pipeline(pl: Pipeline, train: Portfolio, test: Portfolio) -> PipelineRun:
    """Apply the mitigation to ``train``, fit, and price ``test``."""
    prm = dict(pl.params)
    spec = _base(pl.model)
    m = pl.method
    if m == "reference":
        fitted = glm.fit(train, spec)
        return PipelineRun(fitted.predict(test), {"model": fitted})
    if m == "with_s":
        fitted = glm.fit(train, pl.model.replace(include_sensitive=True))
        return PipelineRun(fitted.predict(test), {"model": fitted})
    if m == "delete":
        sc = pre.DeletionScenario(pl.id, tuple(prm.get("deleted", ())), prm.get("threshold")).check(train)
        feats = spec.features or tuple(train.features)
        spec = spec.replace(features=[f for f in feats if f not in sc.deleted])
        fitted = glm.fit(train, spec)
        return PipelineRun(fitted.predict(test), {"model": fitted, "deleted": sc.deleted})
    if m == "corr":
        cols = prm.get("columns") or [c for c in (spec.features or train.features)
                                       if c != train.sensitive and train.spec(c).kind == "quantitative"]
        rem = pre.CorrelationRemover.fit(train, float(prm.get("alpha", 1.0)), cols)
        fitted = glm.fit(rem.transform(train), spec)
        return PipelineRun(fitted.predict(rem.transform(test)), {"model": fitted, "remover": rem})
    if m == "smote":
        cfg = smote_config(prm)
        res = pre.fair_smote(train, cfg)
        fitted = glm.fit(res.portfolio, spec)
        return PipelineRun(fitted.predict(test), {"model": fitted, "smote": res})
    if m == "eg":
        c = inproc.ConstraintSpec(float(prm["zeta"]), prm.get("M"))
        q, rep = inproc.exponentiated_gradient(train, spec, c, float(prm.get("eta_lr", 2.0)),
                                               int(prm.get("T", 50)), float(prm.get("B", 100.0)))
        return PipelineRun(q.predict(test), {"predictor": q, "eg_report": rep})
    if m == "redist":
        fitted = glm.fit(train, spec)
        cfg = post.RedistConfig(float(prm.get("eta", 6.0)), float(prm.get("zeta", 2000.0)),
                                int(prm.get("k", 5)), pl.flip, int(prm.get("max_iter", 10_000)),
                                int(prm.get("start_group", 0)))
        y0 = fitted.predict(test)
        yt, rep, _ = post.redistribute(test, y0, cfg)
        return PipelineRun(yt, {"model": fitted, "redist_report": rep, "y0": y0})
    # avg
    fitted = glm.fit(train, pl.model.replace(include_sensitive=True))
    w = prm.get("weights")
    return PipelineRun(post.output_averaging(fitted, test, tuple(w) if w else None), {"model": fitted})


def smote_config(prm: Mapping) -> pre.SmoteConfig:
    keys = ("st", "ft", "seed", "u_per_column", "ungated_categorical", "y_balance", "on_empty")
    kw = {k: prm[k] for k in keys if k in prm}
    if "bins" in prm:
        kw["bins"] = BinningSpec(tuple(prm["bins"]))
    if "features" in prm:
        kw["features"] = tuple(prm["features"])
    return pre.SmoteConfig(**kw)


def _axis_value(panel, axis: str) -> float:
    if axis == "abs_kendall_tau":
        return abs(panel.kendall_tau)
    if axis == "mean_ratio_gap":
        return min(1.0, abs(1.0 - panel.mean_ratio))
    return float(getattr(panel, axis))


def scenario_from_predictions(pl: Pipeline, test: Portfolio, pred: np.ndarray,
                              extra: Mapping | None = None) -> MitigationScenario:
    spec = pl.flip or DistanceSpec("manhattan", tuple(c for c in test.features if c != test.sensitive))
    panel = fairness_panel(test, pred, spec, k=pl.flip_k, **pl.metric_opts)
    y = glm.response(test, pl.model)
    extras = {f"panel.{k}": v for k, v in panel.to_dict().items() if math.isfinite(v)}
    extras.update(extra or {})
    return MitigationScenario(pl.id, pl.description or pl.method, pl.stage, _axis_value(panel, pl.axis),
                              glm.rmse(y, pred), glm.loss_ratio(y, pred), extras)


def evaluate(pl: Pipeline, train: Portfolio, test: Portfolio) -> MitigationScenario:
    """Run one pipeline; failures become a scenario carrying the cause."""
    try:
        run = run_pipeline(pl, train, test)
        if not np.all(np.isfinite(run.predictions)):
            raise FloatingPointError("non-finite predictions")
        extra = {}
        rep = run.artifacts.get("redist_report")
        if rep is not None:
            extra = {"integrity": rep.integrity, "global_variation": rep.global_variation}
        eg = run.artifacts.get("eg_report")
        if eg is not None:
            extra = {"eg_gap": eg.gap, "eg_converged": float(eg.converged)}
        return scenario_from_predictions(pl, test, run.predictions, extra)
    except Exception as exc:
        log.warning("scenario %s failed: %s", pl.id, exc)
        return MitigationScenario(pl.id, pl.description or pl.method, pl.stage, None, None, None,
                                  {}, f"{type(exc).__name__}: {exc}")


def evaluate_all(pipelines: Sequence[Pipeline], train: Portfolio, test: Portfolio,
                 workers: int = 1) -> list[MitigationScenario]:
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda pl: evaluate(pl, train, test), pipelines))
    return [evaluate(pl, train, test) for pl in pipelines]


def pareto_front(scenarios: Sequence[MitigationScenario]) -> list[bool]:
    """Non-dominated flag per scenario; failed scenarios are never on the front."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    ok = [i for i, s in enumerate(scenarios) if not s.failed]
    flags = [False] * len(scenarios)
    dom = dominated_mask([scenarios[i].fairness for i in ok], [scenarios[i].performance for i in ok])
    for i, d in zip(ok, dom):
        flags[i] = not d
    return flags


# -- reports --------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report(scenarios: Sequence[MitigationScenario], path) -> dict[str, Path]:
    """Write ``<path>.csv``, ``<path>.json``, ``<path>_plot.csv`` and ``<path>_table.csv``.

    The main CSV has one row per scenario with id, HGR, RMSE, LR and any
    extras; the table CSV is the transposed metric-by-scenario layout.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.with_suffix("")
    scenarios = sorted(scenarios, key=lambda s: s.id)
    front = pareto_front(scenarios) if scenarios else []
    keys = sorted({k for s in scenarios for k in s.extras})
    out = {"csv": stem.with_suffix(".csv"), "json": stem.with_suffix(".json"),
           "plot": Path(f"{stem}_plot.csv"), "table": Path(f"{stem}_table.csv")}
    with out["csv"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "HGR", "RMSE", "LR"] + keys)
        for s in scenarios:
            w.writerow([s.id, _fmt(s.fairness), _fmt(s.performance), _fmt(s.lr)]
                       + [_fmt(s.extras.get(k)) for k in keys])
    with out["plot"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "fairness", "performance", "dominated"])
        for s, f in zip(scenarios, front):
            if not s.failed:
                w.writerow([s.id, _fmt(s.fairness), _fmt(s.performance), int(not f)])
    with out["table"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + [s.id for s in scenarios])
        for label, attr in (("HGR KDE", "fairness"), ("RMSE", "performance"), ("Loss ratio", "lr")):
            w.writerow([label] + [_fmt(getattr(s, attr)) for s in scenarios])
    doc = {"v": REPORT_VERSION, "scenarios": [s.to_dict() for s in scenarios],
           "front": [s.id for s, f in zip(scenarios, front) if f]}
    out["json"].write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return out


def load_report(path) -> list[MitigationScenario]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("v") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {doc.get('v')!r}")
    return [MitigationScenario.from_dict(d) for d in doc["scenarios"]]


def load_record(path) -> list[MitigationScenario]:
    """A single scenario record or a full report."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "scenarios" in doc:
        return load_report(path)
    return [MitigationScenario.from_dict(doc)]


def write_record(s: MitigationScenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(s.to_dict(), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path

