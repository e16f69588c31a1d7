"""Non-dominated filtering with lower-is-better on both axes."""

from __future__ import annotations

import numpy as np


def dominated_mask(a, b) -> np.ndarray:
    """True where some other point is <= on both axes and < on one.

    Sort by (a, b); a sweep keeps the smallest ``b`` seen among points with
    strictly smaller ``a``. Points equal on both axes do not dominate each
    other.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    out = np.zeros(n, dtype=bool)
    if n == 0:
        return out
    order = np.lexsort((b, a))
    best_prev = np.inf  # min b over strictly smaller a
    i = 0
    while i < n:
        j = i
        while j < n and a[order[j]] == a[order[i]]:
            j += 1
        group = order[i:j]
        b_min = b[group[0]]  # lexsort puts the group's smallest b first
        for r in group:
            out[r] = best_prev <= b[r] or b_min < b[r]
        best_prev = min(best_prev, b_min)
        i = j
    return out


def pareto_front(a, b) -> np.ndarray:
    """Indices of non-dominated points in input order."""
    return np.flatnonzero(~dominated_mask(a, b))
