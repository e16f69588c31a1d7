"""Slow, independent reference implementations used as test oracles.

Every routine here is written from the textbook definition with plain
loops or broadcasting and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import chi2_contingency


def ks_stat_exhaustive(a, b) -> float:
    """max |F_a(t) - F_b(t)| over every pooled sample point t."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.concatenate([a, b])
    fa = (a[None, :] <= t[:, None]).sum(axis=1) / a.size
    fb = (b[None, :] <= t[:, None]).sum(axis=1) / b.size
    return float(np.max(np.abs(fa - fb)))


def kolmogorov_series(x: float, terms: int = 100) -> float:
    """P(K > x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)."""
    if x <= 0:
        return 1.0
    s = 0.0
    for k in range(1, terms + 1):
        s += (-1) ** (k - 1) * math.exp(-2.0 * k * k * x * x)
    return min(1.0, max(0.0, 2.0 * s))


def kendall_tau_b_pairs(a, b) -> float:
    """Tau-b by explicit pair counting."""
    n = len(a)
    conc = disc = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = a[i] - a[j]
            db = b[i] - b[j]
            if da == 0 and db == 0:
                continue
            if da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif (da > 0) == (db > 0):
                conc += 1
            else:
                disc += 1
    n1 = conc + disc + ties_a
    n2 = conc + disc + ties_b
    return (conc - disc) / math.sqrt(n1 * n2)


def knn_bruteforce(Q, X, k: int, q: float = 1.0):
    """Per query: the k (index, distance) pairs sorted by (distance, index)."""
    out = []
    for x in Q:
        d = [(sum(abs(float(x[c]) - float(r[c])) ** q for c in range(len(x))) ** (1.0 / q), j)
             for j, r in enumerate(X)]
        d.sort()
        out.append([(j, dist) for dist, j in d[:k]])
    return out


def dominated_pairwise(a, b) -> np.ndarray:
    n = len(a)
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and a[j] <= a[i] and b[j] <= b[i] and (a[j] < a[i] or b[j] < b[i]):
                out[i] = True
                break
    return out


def binary_hgr_chi2(u, v) -> float:
    """For a two-valued u, HGR^2 equals chi^2 / n of the contingency table."""
    _, iu = np.unique(u, return_inverse=True)
    _, iv = np.unique(v, return_inverse=True)
    table = np.zeros((iu.max() + 1, iv.max() + 1))
    np.add.at(table, (iu, iv), 1)
    chi2 = chi2_contingency(table, correction=False)[0]
    return math.sqrt(chi2 / len(u))


def redistribution_trace(y0, s, neighbors, eta: float, zeta: float, max_iter: int, start: int = 0):
    """Row-by-row replay of the alternating correction.

    ``neighbors[i]`` lists the opposite-group neighbours of row ``i``.
    Returns the premium vector after each step (index 0 = start) and the
    group bias sums checked before each step.
    """
    y = [float(v) for v in y0]
    n = len(y)

    def eps_of(g):
        e = {}
        for i in range(n):
            if s[i] == g:
                e[i] = y[i] - sum(y[j] for j in neighbors[i]) / len(neighbors[i])
        return e

    g = start
    eps = eps_of(g)
    trace = [list(y)]
    sums = [sum(eps.values())]
    it = 0
    while abs(sums[-1]) >= zeta and it < max_iter:
        for i, e in eps.items():
            y[i] -= e / eta
        it += 1
        g = 1 - g
        eps = eps_of(g)
        trace.append(list(y))
        sums.append(sum(eps.values()))
    return trace, sums


def poisson_rates_by_level(level, claims, expo) -> dict:
    out = {}
    for lv in sorted(set(level.tolist())):
        m = level == lv
        out[lv] = float(claims[m].sum() / expo[m].sum())
    return out
