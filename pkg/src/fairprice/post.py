"""Post-processing mitigation: iterative fair redistribution and output averaging."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Portfolio
from .glm import FittedGLM, rmse
from .knn import DistanceSpec, cross_group_neighbors, neighbor_mean
from .metrics import hgr_kde
from .pareto import dominated_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RedistConfig:
    eta: float = 6.0
    zeta: float = 2000.0
    k: int = 5
    d_spec: DistanceSpec | None = None
    max_iter: int = 10_000
    start_group: int = 0

    def __post_init__(self):
        if not self.eta >= 1:
            raise ValueError("eta must be >= 1")
        if not self.zeta >= 0:
            raise ValueError("zeta must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.start_group not in (0, 1):
            raise ValueError("start_group must be 0 or 1")


@dataclass
class RedistributionState:
    y0: np.ndarray
    y: np.ndarray
    eps: np.ndarray  # latest bias per row (rows of the idle group hold stale values)
    sigma: np.ndarray  # latest sum of bias per group
    iteration: int = 0
    history: list = field(default_factory=list)

    @property
    def eps_final(self) -> np.ndarray:
        return self.y0 - self.y


@dataclass(frozen=True)
class RedistReport:
    integrity: float
    global_variation: float
    iterations: int
    stop_reason: str
    sigma: tuple  # final per-group bias sums
    residual: float  # sigma_0 + sigma_1, informational

    def to_dict(self) -> dict:
        return {"v": 1, "integrity": self.integrity, "global_variation": self.global_variation,
                "iterations": self.iterations, "stop_reason": self.stop_reason,
                "sigma": list(self.sigma), "residual": self.residual}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _default_spec(p: Portfolio) -> DistanceSpec:
    return DistanceSpec("manhattan", tuple(c for c in p.features if c != p.sensitive))


class _Trajectory:
    """Alternating correction steps; ``zeta`` only decides where to stop."""

    def __init__(self, p: Portfolio, y0: np.ndarray, neighbors: np.ndarray, eta: float, start_group: int):
        self.rows = [np.flatnonzero(p.s == 0), np.flatnonzero(p.s == 1)]
        if self.rows[0].size == 0 or self.rows[1].size == 0:
            raise ValueError("both groups must be non-empty")
        self.nb = [neighbors[r] for r in self.rows]
        self.eta = eta
        self.y0 = y0
        self.y = y0.copy()
        self.eps = np.zeros(y0.size)
        self.sigma = np.zeros(2)
        self.g = start_group
        self.it = 0
        self.bias(self.g)

    def bias(self, g: int) -> None:
        e = self.y[self.rows[g]] - neighbor_mean(self.y, self.nb[g])
        self.eps[self.rows[g]] = e
        self.sigma[g] = float(np.sum(e))

    def step(self) -> None:
        r = self.rows[self.g]
        self.y[r] -= self.eps[r] / self.eta
        self.it += 1
        self.g = 1 - self.g
        self.bias(self.g)

    def finish(self, zeta: float) -> RedistReport:
        self.bias(1 - self.g)
        reason = "converged" if abs(self.sigma[self.g]) < zeta else "iteration cap"
        span = self.y0.max() - self.y0.min()
        return RedistReport(float((self.y.max() - self.y.min()) / span),
                            math.fsum(self.y) - math.fsum(self.y0), self.it, reason,
                            (float(self.sigma[0]), float(self.sigma[1])),
                            float(self.sigma[0] + self.sigma[1]))


def _check_inputs(p: Portfolio, predictions) -> np.ndarray:
    y0 = np.asarray(predictions, dtype=float).copy()
    if y0.shape != (p.n,):
        raise ValueError("one prediction per row is required")
    if not y0.max() - y0.min() > 0:
        raise ValueError("constant premiums: redistribution integrity is undefined")
    return y0


def redistribute(p: Portfolio, predictions, cfg: RedistConfig, neighbors: np.ndarray | None = None,
                 keep_history: bool = False):
    """Alternately pull each group's premiums toward its opposite-group neighbours.

    Each correction moves a row by ``eps / eta`` where ``eps`` is its gap to
    the mean current premium of its ``k`` nearest opposite-group rows. The
    loop stops once the checked group's ``|sum(eps)|`` drops below ``zeta``.
    Neighbour sets depend on features only and are computed once.
    Returns ``(y_tilde, report, state)``.
    """
    y0 = _check_inputs(p, predictions)
    if neighbors is None:
        spec = cfg.d_spec or _default_spec(p)
        neighbors, _, _ = cross_group_neighbors(p, spec, cfg.k)
    tr = _Trajectory(p, y0, neighbors, cfg.eta, cfg.start_group)
    history = [(0, tr.g, float(tr.sigma[tr.g]), tr.y.copy())] if keep_history else []
    while abs(tr.sigma[tr.g]) >= cfg.zeta and tr.it < cfg.max_iter:
        tr.step()
        log.debug("REDIST it=%d group=%d sigma=%.10g", tr.it, tr.g, tr.sigma[tr.g])
        if keep_history:
            history.append((tr.it, tr.g, float(tr.sigma[tr.g]), tr.y.copy()))
    rep = tr.finish(cfg.zeta)
    log.info("REDIST done eta=%g zeta=%g it=%d integrity=%.6g variation=%.6g reason=%s",
             cfg.eta, cfg.zeta, rep.iterations, rep.integrity, rep.global_variation, rep.stop_reason)
    state = RedistributionState(y0, tr.y, tr.eps, tr.sigma, tr.it, history)
    return tr.y.copy(), rep, state


def write_correction_table(path, y0, y_tilde) -> None:
    """CSV of row id, original premium, total correction and corrected premium."""
    y0 = np.asarray(y0, dtype=float)
    y_tilde = np.asarray(y_tilde, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,y_hat,eps_final,y_tilde\n")
        for i, (a, b) in enumerate(zip(y0, y_tilde)):
            fh.write(f"{i},{float(a)!r},{float(a - b)!r},{float(b)!r}\n")


@dataclass(frozen=True)
class GridCell:
    eta: float
    zeta: float
    report: RedistReport | None
    hgr: float
    rmse: float
    dominated: bool = False
    error: str | None = None


def redist_grid(p: Portfolio, predictions, etas: Sequence[float], zetas: Sequence[float],
                d_spec: DistanceSpec | None = None, k: int = 5, max_iter: int = 10_000,
                start_group: int = 0, workers: int = 1) -> list[GridCell]:
    """Every (eta, zeta) pair, scored on integrity, global variation, RMSE and HGR.

    For a given eta the correction path does not depend on zeta, so one
    path per eta is walked and snapshotted where each zeta would stop it.
    ``dominated`` compares cells on ``|global variation|`` (lower better)
    and integrity (higher better). Failed cells are kept and never dominate.
    """
    if not etas or not zetas:
        raise ValueError("empty eta or zeta grid")
    spec = d_spec or _default_spec(p)
    y0 = _check_inputs(p, predictions)
    neighbors, _, _ = cross_group_neighbors(p, spec, k)
    y = p.y

    def walk(eta):
        out = {}
        try:
            RedistConfig(eta, 0.0, k, spec, max_iter, start_group)
            tr = _Trajectory(p, y0, neighbors, eta, start_group)
        except Exception as exc:
            return {z: GridCell(float(eta), float(z), None, math.nan, math.nan, error=str(exc)) for z in zetas}
        for z in sorted(set(zetas), reverse=True):
            while abs(tr.sigma[tr.g]) >= z and tr.it < max_iter:
                tr.step()
            rep = tr.finish(z)
            out[z] = GridCell(float(eta), float(z), rep, hgr_kde(p.s, tr.y), rmse(y, tr.y))
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            by_eta = list(ex.map(walk, etas))
    else:
        by_eta = [walk(e) for e in etas]
    cells = [res[z] for res in by_eta for z in zetas]
    ok = [i for i, c in enumerate(cells) if c.report is not None]
    dom = dominated_mask([abs(cells[i].report.global_variation) for i in ok],
                         [-cells[i].report.integrity for i in ok])
    out = list(cells)
    for i, d in zip(ok, dom):
        c = cells[i]
        out[i] = GridCell(c.eta, c.zeta, c.report, c.hgr, c.rmse, bool(d))
    return out


def write_grid_csv(cells: Sequence[GridCell], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("eta,zeta,iterations,stop_reason,integrity,global_variation,hgr,rmse,dominated,error\n")
        for c in cells:
            r = c.report
            fh.write(",".join([
                repr(c.eta), repr(c.zeta), str(r.iterations) if r else "", r.stop_reason if r else "failed",
                repr(r.integrity) if r else "", repr(r.global_variation) if r else "",
                repr(c.hgr), repr(c.rmse), str(int(c.dominated)), (c.error or "").replace(",", ";"),
            ]) + "\n")


# -- output averaging -------------------------------------------------------------------


def output_averaging(m_with_s: FittedGLM, p: Portfolio, weights: tuple | None = None) -> np.ndarray:
    """Average of the predictions with S forced to 0 and to 1.

    ``weights`` defaults to the portfolio's group shares.
    """
    sname = p.sensitive
    if sname not in m_with_s.design.columns:
        raise ValueError("output averaging needs a model that uses the sensitive column")
    if weights is None:
        n0, n1 = p.group_counts()
        weights = (n0 / p.n, n1 / p.n)
    w0, w1 = map(float, weights)
    if w0 < 0 or w1 < 0 or not math.isclose(w0 + w1, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError("averaging weights must be non-negative and sum to 1")
    y0 = m_with_s.predict(p.with_columns({sname: np.zeros(p.n, dtype=np.int64)}))
    y1 = m_with_s.predict(p.with_columns({sname: np.ones(p.n, dtype=np.int64)}))
    return w0 * y0 + w1 * y1
