"""Log-link GLMs (Poisson, Gamma, Tweedie) fitted by IRLS, plus RMSE / loss ratio."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import Portfolio, SchemaError

FAMILIES = ("poisson", "gamma", "tweedie")
WEIGHT_ROLES = ("unit", "exposure", "claim_count")
RIDGE = 1e-10


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class GlmSpec:
    family: str = "tweedie"
    features: tuple = ()
    power: float = 1.5
    weight: str = "unit"
    offset: bool = True  # log(exposure) offset
    include_sensitive: bool = False
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "tweedie" and not 1 < self.power < 2:
            raise ValueError("tweedie power must lie in (1, 2)")
        if self.weight not in WEIGHT_ROLES:
            raise ValueError(f"unknown weight role {self.weight!r}")

    @property
    def variance_power(self) -> float:
        return {"poisson": 1.0, "gamma": 2.0}.get(self.family, self.power)

    def replace(self, **kw) -> "GlmSpec":
        d = self.to_dict()
        d.update(kw)
        return GlmSpec.from_dict(d)

    def to_dict(self) -> dict:
        return {"family": self.family, "features": list(self.features), "power": self.power,
                "weight": self.weight, "offset": self.offset,
                "include_sensitive": self.include_sensitive, "target": self.target}

    @classmethod
    def from_dict(cls, d) -> "GlmSpec":
        return cls(family=d.get("family", "tweedie"), features=tuple(d.get("features", ())),
                   power=float(d.get("power", 1.5)), weight=d.get("weight", "unit"),
                   offset=bool(d.get("offset", True)),
                   include_sensitive=bool(d.get("include_sensitive", False)),
                   target=d.get("target"))


# -- design matrix -----------------------------------------------------------------


@dataclass(frozen=True)
class Design:
    """Column layout: intercept, then numeric columns, then dummies.

    Categorical columns use treatment coding with the most frequent training
    level as reference (ties go to the first level in sorted order).
    """

    columns: tuple  # source column names in model order
    kinds: tuple
    levels: dict  # categorical column -> non-reference levels
    reference: dict  # categorical column -> reference level

    @classmethod
    def fit(cls, p: Portfolio, names) -> "Design":
        kinds, levels, reference = [], {}, {}
        for name in names:
            kind = p.spec(name).kind
            kinds.append(kind)
            if kind == "categorical":
                lv, counts = np.unique(p[name], return_counts=True)
                ref = lv[int(np.argmax(counts))]
                reference[name] = str(ref)
                levels[name] = tuple(str(x) for x in lv if x != ref)
        return cls(tuple(names), tuple(kinds), levels, reference)

    @property
    def names(self) -> list[str]:
        out = ["(intercept)"]
        for name, kind in zip(self.columns, self.kinds):
            if kind == "categorical":
                out += [f"{name}[{lv}]" for lv in self.levels[name]]
            else:
                out.append(name)
        return out

    def matrix(self, p: Portfolio) -> np.ndarray:
        parts = [np.ones((p.n, 1))]
        for name, kind in zip(self.columns, self.kinds):
            if name not in p.columns:
                raise SchemaError(f"portfolio lacks model column {name!r}")
            col = p[name]
            if kind == "categorical":
                known = set(self.levels[name]) | {self.reference[name]}
                unseen = sorted(set(np.unique(col).tolist()) - known)
                if unseen:
                    raise SchemaError(f"unseen level {unseen[0]!r} in column {name!r}")
                parts.append(np.stack([(col == lv).astype(float) for lv in self.levels[name]], axis=1)
                             if self.levels[name] else np.zeros((p.n, 0)))
            else:
                parts.append(col.astype(float)[:, None])
        return np.hstack(parts)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "kinds": list(self.kinds),
                "levels": {k: list(v) for k, v in self.levels.items()}, "reference": dict(self.reference)}

    @classmethod
    def from_dict(cls, d) -> "Design":
        return cls(tuple(d["columns"]), tuple(d["kinds"]),
                   {k: tuple(v) for k, v in d["levels"].items()}, dict(d["reference"]))


def model_columns(p: Portfolio, spec: GlmSpec) -> list[str]:
    names = list(spec.features) if spec.features else list(p.features)
    if spec.include_sensitive:
        if p.sensitive not in names:
            names.append(p.sensitive)
    else:
        names = [c for c in names if c != p.sensitive]
    return names


def response(p: Portfolio, spec: GlmSpec) -> np.ndarray:
    return p[spec.target] if spec.target else p.y


def base_weights(p: Portfolio, spec: GlmSpec) -> np.ndarray:
    if spec.weight == "unit":
        return np.ones(p.n)
    col = p.role(spec.weight)
    if col is None:
        raise SchemaError(f"weight role {spec.weight!r} has no column in the schema")
    w = p[col].astype(float)
    if np.any(w <= 0):
        raise SchemaError(f"weight column {col!r} must be strictly positive")
    return w


def offset_vector(p: Portfolio, spec: GlmSpec) -> np.ndarray:
    if not spec.offset:
        return np.zeros(p.n)
    e = p.exposure
    if e is None:
        raise SchemaError("log-exposure offset requested but no exposure column")
    if np.any(e <= 0):
        raise SchemaError("exposure must be positive for the offset")
    return np.log(e)


# -- deviance ------------------------------------------------------------------------


def unit_deviance(y: np.ndarray, mu: np.ndarray, power: float) -> np.ndarray:
    if power == 1.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(y / mu), 0.0)
        return 2 * (ylog - (y - mu))
    if power == 2.0:
        return 2 * (-np.log(y / mu) + (y - mu) / mu)
    p = power
    return 2 * (np.power(y, 2 - p) / ((1 - p) * (2 - p)) - y * np.power(mu, 1 - p) / (1 - p)
                + np.power(mu, 2 - p) / (2 - p))


def deviance(y, mu, w, power) -> float:
    return float(np.sum(w * unit_deviance(y, mu, power)))


# -- fitted model ----------------------------------------------------------------------


@dataclass(frozen=True)
class FittedGLM:
    coef: np.ndarray
    spec: GlmSpec
    design: Design
    converged: bool
    iterations: int
    deviance_path: tuple = field(default=(), repr=False)

    @property
    def deviance(self) -> float:
        return self.deviance_path[-1] if self.deviance_path else float("nan")

    @property
    def names(self) -> list[str]:
        return self.design.names

    def coefficients(self) -> dict:
        return dict(zip(self.names, map(float, self.coef)))

    def linear_predictor(self, p: Portfolio) -> np.ndarray:
        return self.design.matrix(p) @ self.coef + offset_vector(p, self.spec)

    def predict(self, p: Portfolio) -> np.ndarray:
        return np.exp(self.linear_predictor(p))

    def to_dict(self) -> dict:
        return {"v": 1, "spec": self.spec.to_dict(), "design": self.design.to_dict(),
                "coefficients": self.coefficients(), "converged": self.converged,
                "iterations": self.iterations, "deviance": self.deviance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "FittedGLM":
        design = Design.from_dict(d["design"])
        coef = np.array([d["coefficients"][n] for n in design.names])
        return cls(coef, GlmSpec.from_dict(d["spec"]), design, bool(d["converged"]),
                   int(d["iterations"]), (float(d["deviance"]),))


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    scale = np.sqrt((X * X).sum(axis=0))
    scale[scale == 0] = 1.0
    Xs = X / scale
    _, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps * 10
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        bad = [names[j] for j in sorted(piv[rank:])]
        raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {bad}")


def fit(p: Portfolio, spec: GlmSpec, sample_weight=None, tol: float = 1e-8, max_iter: int = 100,
        start: np.ndarray | None = None) -> FittedGLM:
    """IRLS with step halving.

    ``sample_weight`` multiplies the GlmSpec base weights (used by the
    in-processing reweighting). Stops once the relative deviance change is
    below ``tol`` and the coefficient step is negligible; the returned model carries ``converged=False`` when
    ``max_iter`` is reached.
    """
    design = Design.fit(p, model_columns(p, spec))
    X = design.matrix(p)
    y = response(p, spec).astype(float)
    w = base_weights(p, spec)
    if sample_weight is not None:
        sample_weight = np.asarray(sample_weight, dtype=float)
        if np.any(sample_weight < 0):
            raise ValueError("sample weights must be non-negative")
        w = w * sample_weight
    off = offset_vector(p, spec)
    pw = spec.variance_power
    if np.any(y < 0) or (pw == 2.0 and np.any(y <= 0)):
        raise ValueError(f"response not in the support of the {spec.family} family")
    _check_rank(X[w > 0], design.names)

    if start is not None:
        beta = np.array(start, dtype=float)
    else:
        beta = np.zeros(X.shape[1])
        rate = np.sum(w * y) / np.sum(w * np.exp(off))
        beta[0] = math.log(max(rate, 1e-12))
    mu = np.exp(X @ beta + off)
    dev = deviance(y, mu, w, pw)
    path = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta + off
        mu = np.exp(eta)
        W = w * np.power(mu, 2.0 - pw)
        z = (eta - off) + (y - mu) / mu
        XtW = X.T * W
        A = XtW @ X
        A[np.diag_indices_from(A)] += RIDGE * max(1.0, float(np.mean(np.diag(A))))
        new = linalg.solve(A, XtW @ z, assume_a="pos")
        step = new - beta
        for _ in range(40):
            cand = beta + step
            new_dev = deviance(y, np.exp(X @ cand + off), w, pw)
            if np.isfinite(new_dev) and new_dev <= dev * (1 + 1e-12) + 1e-300:
                break
            step = step / 2
        else:
            cand, new_dev = beta, dev
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        moved = float(np.max(np.abs(cand - beta)))
        beta, dev = cand, new_dev
        path.append(dev)
        # deviance flattens quadratically, so also wait for the step itself to vanish
        if change < tol and (moved < 1e-9 * (1 + float(np.max(np.abs(beta)))) or change < 1e-15):
            converged = True
            break
    return FittedGLM(beta, spec, design, converged, it, tuple(path))


def predict(m: FittedGLM, p: Portfolio) -> np.ndarray:
    return m.predict(p)


# -- performance metrics ----------------------------------------------------------------


def rmse(y, y_hat, w=None) -> float:
    """sqrt((1/n) * sum w_i (yhat_i - y_i)^2), normalised by the row count."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.size == 0:
        raise ValueError("rmse of an empty vector")
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("rmse weights must be positive")
    return math.sqrt(math.fsum(w * (y_hat - y) ** 2) / y.size)


def rmse_weighted_mean(y, y_hat, w) -> float:
    """Conventional weighted RMSE normalised by the weight total."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    return math.sqrt(math.fsum(w * (np.asarray(y_hat) - y) ** 2) / math.fsum(w))


def loss_ratio(y, y_hat) -> float:
    den = math.fsum(np.asarray(y_hat, dtype=float))
    if den <= 0:
        raise ValueError("loss_ratio needs a positive premium total")
    return math.fsum(np.asarray(y, dtype=float)) / den
