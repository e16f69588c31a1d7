"""In-processing mitigation: bounded group loss via exponentiated gradient.

The constraint for each group ``s`` is ``E[min(l, M) | S=s] <= zeta`` with
``l`` the squared error. The learner is a row-reweighted GLM; the dual
player keeps ``lambda = B * exp(theta) / (1 + sum(exp(theta)))`` and
moves ``theta`` along the constraint violations.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import glm
from .dataset import Portfolio
from .glm import FittedGLM, GlmSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintSpec:
    zeta: float
    M: float | None = None

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.M is not None and not self.M > 0:
            raise ValueError("M must be positive when given")


def squared_loss(y, y_hat) -> np.ndarray:
    return (np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)) ** 2


def group_clipped_loss(y, y_hat, s, M: float | None = None) -> np.ndarray:
    """``E[min((y - yhat)^2, M) | S=s]`` for s = 0, 1."""
    s = np.asarray(s)
    l = squared_loss(y, y_hat)
    if M is not None:
        l = np.minimum(l, M)
    out = np.empty(2)
    for g in (0, 1):
        m = s == g
        if not m.any():
            raise ValueError(f"group {g} is empty")
        out[g] = l[m].mean()
    return out


@dataclass(frozen=True)
class RandomizedPredictor:
    members: tuple  # FittedGLM
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.members) != w.size or w.size == 0:
            raise ValueError("need one weight per member")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")

    def predict(self, p: Portfolio) -> np.ndarray:
        if len(self.members) == 1:
            return self.members[0].predict(p)
        return sum(w * m.predict(p) for m, w in zip(self.members, self.weights))

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members], "weights": list(self.weights)}


@dataclass(frozen=True)
class EgReport:
    iterations: int
    gap: float
    group_losses: tuple
    converged: bool
    zeta: float
    M: float | None
    lambdas: tuple = field(default=(), repr=False)  # lambda_t per round
    gaps: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"v": 1, "iterations": self.iterations, "gap": self.gap,
                "group_losses": list(self.group_losses), "converged": self.converged,
                "zeta": self.zeta, "M": self.M, "lambdas": [list(l) for l in self.lambdas],
                "gaps": list(self.gaps)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -- learner -------------------------------------------------------------------


class _Game:
    """Shared bookkeeping: fits, per-member losses and the Lagrangian."""

    def __init__(self, p: Portfolio, spec: GlmSpec, c: ConstraintSpec):
        if spec.include_sensitive:
            raise ValueError("the constrained learner must not use S as a feature")
        self.p, self.spec, self.c = p, spec, c
        self.y = glm.response(p, spec).astype(float)
        self.s = p.s
        self.n = p.n
        self.n_s = np.array([(self.s == 0).sum(), (self.s == 1).sum()], dtype=float)

    def weights(self, lam: np.ndarray, inside: np.ndarray) -> np.ndarray:
        up = lam[self.s] * self.n / self.n_s[self.s]
        return 1.0 + up * inside

    def inside(self, y_hat: np.ndarray) -> np.ndarray:
        if self.c.M is None:
            return np.ones(self.n)
        return (squared_loss(self.y, y_hat) <= self.c.M).astype(float)

    def fit(self, lam: np.ndarray, inside: np.ndarray, start=None) -> FittedGLM:
        return glm.fit(self.p, self.spec, sample_weight=self.weights(lam, inside), start=start)

    def stats(self, m: FittedGLM) -> tuple[float, np.ndarray, np.ndarray]:
        """(error, gamma, predictions) of one member."""
        y_hat = m.predict(self.p)
        err = float(np.mean(squared_loss(self.y, y_hat)))
        gamma = group_clipped_loss(self.y, y_hat, self.s, self.c.M) - self.c.zeta
        return err, gamma, y_hat

    def lagrangian(self, err: float, gamma: np.ndarray, lam: np.ndarray) -> float:
        return err + float(lam @ gamma)

    def gap(self, err_q, gamma_q, lam_hat, br_err, br_gamma, B) -> float:
        best = np.zeros(2)
        if gamma_q.max() > 0:
            best[int(np.argmax(gamma_q))] = B
        l_hat = self.lagrangian(err_q, gamma_q, lam_hat)
        up = self.lagrangian(err_q, gamma_q, best) - l_hat
        down = l_hat - self.lagrangian(br_err, br_gamma, lam_hat)
        return max(up, down, 0.0)


def _lam_from_theta(theta: np.ndarray, B: float) -> np.ndarray:
    m = max(0.0, float(theta.max()))
    e = np.exp(theta - m)
    return B * e / (math.exp(-m) + e.sum())


def exponentiated_gradient(p: Portfolio, spec: GlmSpec, c: ConstraintSpec, eta_lr: float = 2.0,
                           T: int = 50, B: float = 100.0) -> tuple[RandomizedPredictor, EgReport]:
    """Run the Lagrangian game and return the best-gap uniform mixture.

    Round 0 is the unconstrained fit (lambda = 0). Each later round fits
    the best response to the current lambda, plus the best response to
    the running mean of lambdas, which the duality gap needs.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not eta_lr > 0:
        raise ValueError("eta_lr must be positive")
    if not B > 0:
        raise ValueError("B must be positive")
    game = _Game(p, spec, c)
    try:
        h0 = glm.fit(p, spec)
    except Exception as exc:
        raise RuntimeError(f"learner fit failed at round 0: {exc}") from exc
    if np.any(game.n_s == 0):
        # only one group present: the constraint cannot trade groups off
        l = squared_loss(game.y, h0.predict(p))
        if c.M is not None:
            l = np.minimum(l, c.M)
        rep = EgReport(0, 0.0, (float(l.mean()),), True, c.zeta, c.M)
        return RandomizedPredictor((h0,), (1.0,)), rep

    members, errs, gammas = [h0], [], []
    err, gamma, y_hat = game.stats(h0)
    errs.append(err)
    gammas.append(gamma)
    lams = [np.zeros(2)]
    theta = np.zeros(2)
    lam_sum = np.zeros(2)
    best_gap, best_t, gaps = math.inf, 0, []
    inside = game.inside(y_hat)
    for t in range(0, T):
        # mixture of rounds 0..t
        q_err = float(np.mean(errs))
        q_gamma = np.mean(gammas, axis=0)
        lam_sum += lams[t]
        lam_hat = lam_sum / (t + 1)
        if t == 0:
            br_err, br_gamma = errs[0], gammas[0]
        else:
            try:
                br = game.fit(lam_hat, inside, start=members[-1].coef)
            except Exception as exc:
                raise RuntimeError(f"learner fit failed at round {t}: {exc}") from exc
            br_err, br_gamma, _ = game.stats(br)
        nu = game.gap(q_err, q_gamma, lam_hat, br_err, br_gamma, B)
        gaps.append(nu)
        log.info("EG it=%d gap=%.6g lam0=%.6g lam1=%.6g g0=%.6g g1=%.6g",
                 t, nu, lams[t][0], lams[t][1], gamma[0], gamma[1])
        if nu < best_gap:
            best_gap, best_t = nu, t
        if nu < 1e-3 * c.zeta or t == T - 1:
            break
        theta = theta + eta_lr * gamma
        lam = _lam_from_theta(theta, B)
        lams.append(lam)
        try:
            m = game.fit(lam, inside, start=members[-1].coef)
        except Exception as exc:
            raise RuntimeError(f"learner fit failed at round {t + 1}: {exc}") from exc
        err, gamma, y_hat = game.stats(m)
        inside = game.inside(y_hat)
        members.append(m)
        errs.append(err)
        gammas.append(gamma)

    chosen = members[: best_t + 1]
    w = np.full(len(chosen), 1.0 / len(chosen))
    w[-1] = 1.0 - w[:-1].sum()
    losses = np.mean(gammas[: best_t + 1], axis=0) + c.zeta
    converged = best_gap < 1e-3 * c.zeta
    rep = EgReport(len(gaps), float(best_gap), tuple(map(float, losses)), bool(converged),
                   c.zeta, c.M, tuple(tuple(map(float, l)) for l in lams), tuple(gaps))
    return RandomizedPredictor(tuple(chosen), tuple(map(float, w))), rep


# -- grid search ------------------------------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    lam: tuple
    model: FittedGLM | None
    group_losses: tuple
    overall_loss: float
    feasible: bool
    error: str | None = None


def lambda_grid_search(p: Portfolio, spec: GlmSpec, c: ConstraintSpec, grid: Sequence,
                       workers: int = 1) -> list[GridPoint]:
    """One reweighted fit per dual vector; feasible points first, by loss.

    The clip-region indicator comes from the unconstrained fit so every
    grid point is a pure function of its lambda.
    """
    grid = [tuple(map(float, g)) for g in grid]
    if not grid:
        raise ValueError("empty lambda grid")
    game = _Game(p, spec, c)
    base = glm.fit(p, spec)
    inside = game.inside(base.predict(p))

    def one(lam):
        try:
            m = game.fit(np.asarray(lam), inside)
            err, gamma, _ = game.stats(m)
            return GridPoint(lam, m, tuple(map(float, gamma + c.zeta)), err, bool(gamma.max() <= 0))
        except Exception as exc:
            return GridPoint(lam, None, (), math.inf, False, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, grid))
    else:
        res = [one(g) for g in grid]
    order = sorted(range(len(res)), key=lambda i: (not res[i].feasible, res[i].overall_loss, i))
    return [res[i] for i in order]


def dual_grid_oracle_gap(p: Portfolio, spec: GlmSpec, c: ConstraintSpec, grid: Sequence,
                         B: float = 100.0) -> float:
    """Smallest duality gap among pure best responses to the given lambdas."""
    game = _Game(p, spec, c)
    inside = game.inside(glm.fit(p, spec).predict(p))
    best = math.inf
    for lam in grid:
        lam = np.asarray(lam, dtype=float)
        m = game.fit(lam, inside)
        err, gamma, _ = game.stats(m)
        best = min(best, game.gap(err, gamma, lam, err, gamma, B))
    return best


# -- zeta ladder ---------------------------------------------------------------------


def zeta_ladder(p: Portfolio, spec: GlmSpec, zetas: Sequence[float], M: float | None = None,
                eta_lr: float = 2.0, T: int = 50, B: float = 100.0, test: Portfolio | None = None):
    """EG over increasing zeta; rows of (zeta, converged, rmse, hgr)."""
    from .metrics import hgr_kde

    test = test if test is not None else p
    rows = []
    for z in zetas:
        q, rep = exponentiated_gradient(p, spec, ConstraintSpec(z, M), eta_lr, T, B)
        pred = q.predict(test)
        rows.append((float(z), rep.converged, glm.rmse(glm.response(test, spec), pred),
                     hgr_kde(test.s, pred)))
    return rows


def write_ladder_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("zeta,converged,rmse,hgr\n")
        for z, conv, r, h in rows:
            fh.write(f"{z!r},{int(conv)},{r!r},{h!r}\n")
