"""Group and individual fairness measures for binary S and real-valued premiums."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import stats
from scipy.special import kolmogorov

from .dataset import Portfolio
from .knn import (DistanceSpec, Encoder, cross_group_neighbors, neighbor_mean, pairwise_distance,
                  rowwise_distance)

PVALUE_FLOOR = 1e-300
PROB_FLOOR = 1e-10


# -- binary confusion metrics ----------------------------------------------


@dataclass(frozen=True)
class BinaryPanel:
    disparate_impact: float
    m1: float
    mistreatment_10: float | None = None
    mistreatment_01: float | None = None


def _rate(yhat, mask):
    return float(yhat[mask].mean()) if mask.any() else float("nan")


def binary_panel(y_hat, s, y=None) -> BinaryPanel:
    y_hat = np.asarray(y_hat).astype(int)
    s = np.asarray(s).astype(int)
    if not ((s == 0).any() and (s == 1).any()):
        raise ValueError("both sensitive groups must be present")
    p1 = _rate(y_hat, s == 1)
    p0 = _rate(y_hat, s == 0)
    di = math.inf if p0 == 0 else p1 / p0
    m1 = abs(p1 - p0)
    if y is None:
        return BinaryPanel(di, m1)
    y = np.asarray(y).astype(int)
    # |P(Yhat=1|Y=0,S=1) - P(Yhat=1|Y=0,S=0)| and the Y=1 analogue on Yhat=0
    m10 = abs(_rate(y_hat, (y == 0) & (s == 1)) - _rate(y_hat, (y == 0) & (s == 0)))
    m01 = abs(_rate(1 - y_hat, (y == 1) & (s == 1)) - _rate(1 - y_hat, (y == 1) & (s == 0)))
    return BinaryPanel(di, m1, m10, m01)


# -- rank correlation --------------------------------------------------------


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall tau-b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size:
        raise ValueError("kendall_tau needs aligned vectors")
    if a.size < 2:
        raise ValueError("kendall_tau needs at least two observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("kendall_tau undefined for a constant vector")
    return float(stats.kendalltau(a, b, variant="b").statistic)


# -- HGR maximal correlation ---------------------------------------------------


@dataclass(frozen=True)
class HgrResult:
    value: float
    degenerate: bool = False
    unreliable: bool = False
    grid: tuple = ()


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * x.size ** -0.2


def _is_discrete(x: np.ndarray) -> bool:
    return np.unique(x).size <= 2


def _kernel_block(x: np.ndarray, grid: np.ndarray, h: float) -> np.ndarray:
    z = (grid[None, :] - x[:, None]) / h
    return np.exp(-0.5 * z * z)


def _kde_axis(x: np.ndarray, m: int):
    h = silverman_bandwidth(x)
    return np.linspace(x.min() - 3 * h, x.max() + 3 * h, m), h


def _second_singular(J: np.ndarray) -> float:
    J = J / J.sum()
    a = J.sum(axis=1)
    b = J.sum(axis=0)
    keep_a, keep_b = a > 0, b > 0
    J, a, b = J[keep_a][:, keep_b], a[keep_a], b[keep_b]
    if min(J.shape) < 2:
        return 0.0
    Q = J / np.sqrt(np.outer(a, b))
    sv = np.linalg.svd(Q, compute_uv=False)
    return float(min(1.0, max(0.0, sv[1])))


def copula_scores(x: np.ndarray) -> np.ndarray:
    """Mid-rank scores in (0, 1); ties share one score."""
    return stats.rankdata(x) / (x.size + 1)


def joint_mass_grid(u, v, grid_cc: int = 64, grid_bc: int = 256) -> np.ndarray:
    """Discretised joint mass of (u, v) on the estimation grid.

    Continuous axes are mapped to copula scores and smoothed with a
    Gaussian kernel (Silverman bandwidth); a two-valued axis keeps its two
    atoms, so each row of the result is a conditional KDE.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du, dv = _is_discrete(u), _is_discrete(v)
    if du and dv:
        lu, iu = np.unique(u, return_inverse=True)
        lv, iv = np.unique(v, return_inverse=True)
        J = np.zeros((lu.size, lv.size))
        np.add.at(J, (iu, iv), 1.0)
        return J / J.sum()
    if dv and not du:
        return joint_mass_grid(v, u, grid_cc, grid_bc).T
    if du:
        sv = copula_scores(v)
        grid, h = _kde_axis(sv, grid_bc)
        levels = np.unique(u)
        J = np.vstack([_kernel_block(sv[u == lvl], grid, h).sum(axis=0) for lvl in levels])
        return J / J.sum()
    su, sv = copula_scores(u), copula_scores(v)
    gu, hu = _kde_axis(su, grid_cc)
    gv, hv = _kde_axis(sv, grid_cc)
    J = np.zeros((grid_cc, grid_cc))
    step = 8192
    for lo in range(0, u.size, step):
        J += _kernel_block(su[lo:lo + step], gu, hu).T @ _kernel_block(sv[lo:lo + step], gv, hv)
    return J / J.sum()


def hgr_kde_full(u, v, grid_cc: int = 64, grid_bc: int = 256) -> HgrResult:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.size != v.size:
        raise ValueError("hgr_kde needs aligned vectors")
    unreliable = u.size < 30
    if unreliable:
        warnings.warn("hgr_kde on fewer than 30 rows is unreliable", RuntimeWarning, stacklevel=3)
    if u.size == 0 or np.all(u == u[0]) or np.all(v == v[0]):
        return HgrResult(0.0, degenerate=True, unreliable=unreliable)
    J = joint_mass_grid(u, v, grid_cc, grid_bc)
    return HgrResult(_second_singular(J), unreliable=unreliable, grid=J.shape)


def hgr_kde(u, v, grid_cc: int = 64, grid_bc: int = 256) -> float:
    """HGR maximal correlation estimated on a kernel-smoothed joint mass grid.

    The estimate is the second singular value of
    ``q[a, b] = m[a, b] / sqrt(m[a, .] m[., b])``. Continuous variables are
    handled on the copula (rank) scale, which leaves HGR unchanged and
    keeps isolated tail points from forming their own block.
    """
    return hgr_kde_full(u, v, grid_cc, grid_bc).value


def contingency_hgr(u, v) -> float:
    """Exact HGR of two discrete variables from their contingency table."""
    u = np.asarray(u)
    v = np.asarray(v)
    _, iu = np.unique(u, return_inverse=True)
    _, iv = np.unique(v, return_inverse=True)
    J = np.zeros((iu.max() + 1, iv.max() + 1))
    np.add.at(J, (iu, iv), 1.0)
    return _second_singular(J)


# -- two-sample Kolmogorov-Smirnov ---------------------------------------------


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS distance and its asymptotic p-value.

    The p-value is the Kolmogorov survival function at
    ``sqrt(n0 n1 / (n0 + n1)) * d``, floored at 1e-300.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample needs two non-empty samples")
    d = ks_statistic(a, b)
    ne = a.size * b.size / (a.size + b.size)
    p = float(kolmogorov(math.sqrt(ne) * d))
    return d, min(1.0, max(PVALUE_FLOOR, p))


def ks_threshold(n0: int, n1: int, alpha: float) -> float:
    """Asymptotic rejection threshold for the two-sample KS distance."""
    return math.sqrt(-0.5 * math.log(alpha / 2) * (n0 + n1) / (n0 * n1))


# -- divergences ---------------------------------------------------------------


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def histograms(a, b, bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Floored, renormalised histograms of ``a`` and ``b`` on a shared grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("divergences need two non-empty samples")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(a, edges)[0] / a.size
    pb = np.histogram(b, edges)[0] / b.size
    pa = np.maximum(pa, PROB_FLOOR)
    pb = np.maximum(pb, PROB_FLOOR)
    return pa / pa.sum(), pb / pb.sum()


def divergences(a, b, bins: int = 100) -> tuple[float, float]:
    """``(KL(a || b), JS(a, b))`` in nats on equal-width shared histograms."""
    pa, pb = histograms(a, b, bins)
    pm = 0.5 * (pa + pb)
    kl = _kl(pa, pb)
    js = 0.5 * (_kl(pa, pm) + _kl(pb, pm))
    return kl, min(max(js, 0.0), math.log(2))


# -- mean ratio ----------------------------------------------------------------


def mean_ratio(v, s, w=None) -> float:
    """Raw ratio mean(v | S=1) / mean(v | S=0), optionally weighted."""
    v = np.asarray(v, dtype=float)
    s = np.asarray(s).astype(int)
    w = np.ones_like(v) if w is None else np.asarray(w, dtype=float)
    m1, m0 = s == 1, s == 0
    if not m1.any() or not m0.any():
        raise ValueError("mean_ratio needs both groups")
    mean1 = math.fsum(w[m1] * v[m1]) / math.fsum(w[m1])
    mean0 = math.fsum(w[m0] * v[m0]) / math.fsum(w[m0])
    if mean0 == 0:
        raise ValueError("mean_ratio denominator (group 0 mean) is zero")
    return mean1 / mean0


# -- flip test -----------------------------------------------------------------


@dataclass(frozen=True)
class FlipTest:
    ft1: float
    ft0: float
    delta: np.ndarray
    truncated: bool = False


def flip_gaps(predictions, ids) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=float)
    return predictions - neighbor_mean(predictions, ids)


def flip_test(p: Portfolio, predictions, spec: DistanceSpec, k: int = 5, neighbors=None) -> FlipTest:
    """Gap between each prediction and the mean prediction of its ``k``
    nearest opposite-group neighbours, averaged per group.

    ``neighbors`` may carry a precomputed ``(ids, dists, truncated)`` triple
    from :func:`cross_group_neighbors`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if neighbors is None:
        neighbors = cross_group_neighbors(p, spec, k)
    ids, _, trunc = neighbors
    delta = flip_gaps(predictions, ids)
    s = p.s
    ft1 = math.fsum(delta[s == 1]) / max(1, int((s == 1).sum()))
    ft0 = math.fsum(delta[s == 0]) / max(1, int((s == 0).sum()))
    return FlipTest(ft1, ft0, delta, bool(trunc))


# -- Lipschitz individual fairness ---------------------------------------------


def lipschitz_violations(p: Portfolio, predictions, lam: float, spec: DistanceSpec,
                         max_exhaustive: int = 2000, n_pairs: int = 200_000, seed: int = 0) -> float:
    """Share of pairs with ``|yhat_i - yhat_j| >= lam * d(x_i, x_j)``.

    All pairs are checked when ``n <= max_exhaustive``; otherwise
    ``n_pairs`` distinct-index pairs are drawn uniformly. Quantitative
    features are standardised on the whole portfolio.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    predictions = np.asarray(predictions, dtype=float)
    X = Encoder.fit(p, np.arange(p.n), spec).transform(p)
    n = p.n
    if n < 2:
        return 0.0
    if n <= max_exhaustive:
        bad = 0
        total = n * (n - 1) // 2
        for i in range(n - 1):
            d = pairwise_distance(X[i:i + 1], X[i + 1:], spec.q)[0]
            gap = np.abs(predictions[i] - predictions[i + 1:])
            bad += int(_violates(gap, d, lam).sum())
        return bad / total
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n - 1, n_pairs)
    j = j + (j >= i)
    d = rowwise_distance(X[i], X[j], spec.q)
    gap = np.abs(predictions[i] - predictions[j])
    return float(_violates(gap, d, lam).mean())


def _violates(gap: np.ndarray, d: np.ndarray, lam: float) -> np.ndarray:
    # zero distance with unequal premiums counts; equal premiums never do
    with np.errstate(over="ignore", invalid="ignore"):
        bound = lam * d
    return (gap > 0) & (gap >= bound)


# -- panel ---------------------------------------------------------------------

PANEL_COLUMNS = ("kendall_tau", "hgr", "ks_stat", "ks_pvalue", "js_divergence", "mean_ratio",
                 "flip_test_1", "flip_test_0")


@dataclass(frozen=True)
class FairnessPanel:
    kendall_tau: float
    hgr: float
    ks_stat: float
    ks_pvalue: float
    js_divergence: float
    mean_ratio: float
    flip_test_1: float
    flip_test_0: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps({"v": 1, **self.to_dict()}, sort_keys=False)

    def csv_row(self) -> list[str]:
        return [f"{getattr(self, c):.10g}" for c in PANEL_COLUMNS]

    @classmethod
    def from_dict(cls, d) -> "FairnessPanel":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


def fairness_panel(p: Portfolio, values, spec: DistanceSpec | None = None, k: int = 5,
                   js_bins: int = 100, neighbors=None, grid_cc: int = 64, grid_bc: int = 256) -> FairnessPanel:
    """All six measures for ``values`` (premiums or historical Y) against S."""
    values = np.asarray(values, dtype=float)
    s = p.s
    a, b = values[s == 1], values[s == 0]
    ks_d, ks_p = ks_two_sample(a, b)
    _, js = divergences(a, b, js_bins)
    if spec is None:
        spec = DistanceSpec("manhattan", tuple(p.features))
    ft = flip_test(p, values, spec, k, neighbors=neighbors)
    return FairnessPanel(
        kendall_tau=kendall_tau(values, s),
        hgr=hgr_kde(s, values, grid_cc, grid_bc),
        ks_stat=ks_d,
        ks_pvalue=ks_p,
        js_divergence=js,
        mean_ratio=mean_ratio(values, s),
        flip_test_1=ft.ft1,
        flip_test_0=ft.ft0,
    )
