"""Exact k-nearest-neighbour search across sensitive groups.

Two search paths are available and both are exact: a chunked exhaustive
scan, and a KD-tree pre-filter (scipy ``cKDTree``) whose candidate set is
re-ranked with the same distance kernel as the scan. Ties are broken by the
lower row id, so neighbour lists are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dataset import Portfolio

METRICS = ("manhattan", "euclidean", "minkowski")


@dataclass(frozen=True)
class DistanceSpec:
    metric: str = "manhattan"
    features: tuple = ()
    standardize: bool = True
    q: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if not self.features:
            raise ValueError("DistanceSpec.features must be non-empty")
        if self.metric == "manhattan":
            object.__setattr__(self, "q", 1.0)
        elif self.metric == "euclidean":
            object.__setattr__(self, "q", 2.0)
        elif self.q < 1:
            raise ValueError("minkowski order q must be >= 1")

    @classmethod
    def from_dict(cls, d) -> "DistanceSpec":
        return cls(metric=d.get("metric", "manhattan"), features=tuple(d["features"]),
                   standardize=bool(d.get("standardize", True)), q=float(d.get("q", 1.0)))

    def to_dict(self) -> dict:
        return {"metric": self.metric, "features": list(self.features),
                "standardize": self.standardize, "q": self.q}


@dataclass(frozen=True)
class Encoder:
    """Maps portfolio rows to a numeric matrix.

    Quantitative columns are optionally standardised with the reference
    group's mean/std; binary columns stay 0/1; categorical columns expand to
    one indicator per level (scale 1).
    """

    spec: DistanceSpec
    center: dict
    scale: dict
    levels: dict

    @classmethod
    def fit(cls, p: Portfolio, rows: np.ndarray, spec: DistanceSpec) -> "Encoder":
        center, scale, levels = {}, {}, {}
        for name in spec.features:
            if name not in p.columns:
                raise KeyError(f"unknown feature {name!r}")
            kind = p.spec(name).kind
            if kind == "quantitative" and spec.standardize:
                x = p[name][rows]
                sd = float(x.std())
                center[name] = float(x.mean())
                scale[name] = sd if sd > 0 else 1.0
            elif kind == "categorical":
                levels[name] = tuple(p.levels[name])
        return cls(spec, center, scale, levels)

    def transform(self, p: Portfolio, rows=None) -> np.ndarray:
        parts = []
        for name in self.spec.features:
            col = p[name] if rows is None else p[name][rows]
            if name in self.levels:
                lv = self.levels[name]
                idx = {v: i for i, v in enumerate(lv)}
                try:
                    codes = np.array([idx[v] for v in col], dtype=np.int64)
                except KeyError as e:
                    raise ValueError(f"unseen level {e.args[0]!r} in column {name!r}") from None
                onehot = np.zeros((len(col), len(lv)))
                onehot[np.arange(len(col)), codes] = 1.0
                parts.append(onehot)
            else:
                x = col.astype(np.float64)
                if name in self.center:
                    x = (x - self.center[name]) / self.scale[name]
                parts.append(x[:, None])
        return np.hstack(parts) if parts else np.zeros((0, 0))


def pairwise_distance(Q: np.ndarray, X: np.ndarray, q: float = 1.0) -> np.ndarray:
    """Distances between every row of ``Q`` and every row of ``X``.

    Accumulates one coordinate at a time so the result for a given pair does
    not depend on the shapes of the surrounding blocks.
    """
    D = np.zeros((Q.shape[0], X.shape[0]))
    for j in range(Q.shape[1]):
        diff = np.abs(Q[:, j, None] - X[None, :, j])
        if q == 1.0:
            D += diff
        elif q == 2.0:
            D += diff * diff
        else:
            D += diff ** q
    if q == 2.0:
        np.sqrt(D, out=D)
    elif q != 1.0:
        D **= 1.0 / q
    return D


def rowwise_distance(Q: np.ndarray, X: np.ndarray, q: float) -> np.ndarray:
    """Distance between ``Q[i]`` and ``X[i]`` with the same arithmetic as above."""
    d = np.zeros(Q.shape[0])
    for j in range(Q.shape[1]):
        diff = np.abs(Q[:, j] - X[:, j])
        if q == 1.0:
            d += diff
        elif q == 2.0:
            d += diff * diff
        else:
            d += diff ** q
    if q == 2.0:
        d = np.sqrt(d)
    elif q != 1.0:
        d = d ** (1.0 / q)
    return d


def _select(rows: np.ndarray, cols: np.ndarray, dist: np.ndarray, nq: int, k: int):
    """Pick the ``k`` best (distance, col) candidates for each query row."""
    order = np.lexsort((cols, dist, rows))
    rows, cols, dist = rows[order], cols[order], dist[order]
    starts = np.searchsorted(rows, np.arange(nq))
    rank = np.arange(rows.size) - starts[rows]
    keep = rank < k
    out_c = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k))
    out_c[rows[keep], rank[keep]] = cols[keep]
    out_d[rows[keep], rank[keep]] = dist[keep]
    return out_c, out_d


def _knn_scan(Q: np.ndarray, X: np.ndarray, k: int, q: float, chunk: int):
    nq, m = Q.shape[0], X.shape[0]
    ids = np.empty((nq, k), dtype=np.int64)
    dists = np.empty((nq, k))
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        D = pairwise_distance(Q[lo:hi], X, q)
        if k < m:
            kth = np.partition(D, k - 1, axis=1)[:, k - 1]
            r, c = np.nonzero(D <= kth[:, None])
        else:
            r, c = np.divmod(np.arange(D.size), m)
        ids[lo:hi], dists[lo:hi] = _select(r, c, D[r, c], hi - lo, k)
    return ids, dists


def _knn_tree(tree: cKDTree, Q: np.ndarray, X: np.ndarray, k: int, q: float):
    nq = Q.shape[0]
    p = 1 if q == 1.0 else (2 if q == 2.0 else q)
    d_tree, _ = tree.query(Q, k=k, p=p)
    d_tree = np.asarray(d_tree).reshape(nq, k)
    radius = d_tree[:, -1] * (1 + 1e-9) + 1e-12
    lists = tree.query_ball_point(Q, radius, p=p)
    lens = np.fromiter((len(l) for l in lists), dtype=np.int64, count=nq)
    r = np.repeat(np.arange(nq), lens)
    c = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.int64, count=int(lens.sum()))
    d = rowwise_distance(Q[r], X[c], q)
    return _select(r, c, d, nq, k)


@dataclass(frozen=True)
class NeighborIndex:
    """Exact k-NN index over the rows of one sensitive group."""

    group: int
    rows: np.ndarray  # portfolio row ids of the reference group
    X: np.ndarray
    encoder: Encoder
    method: str = "scan"
    _tree: object = field(default=None, repr=False, compare=False)

    @property
    def spec(self) -> DistanceSpec:
        return self.encoder.spec

    @property
    def size(self) -> int:
        return self.X.shape[0]

    def encode(self, p: Portfolio, rows=None) -> np.ndarray:
        return self.encoder.transform(p, rows)

    def query_many(self, Q: np.ndarray, k: int, chunk: int = 512):
        """Neighbours for a batch of encoded rows.

        Returns ``(row_ids, distances, truncated)`` where ``row_ids`` are
        portfolio row ids with shape ``(len(Q), min(k, size))``.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        kk = min(k, self.size)
        truncated = kk < k
        if self._tree is not None and kk < self.size:
            local, d = _knn_tree(self._tree, Q, self.X, kk, self.spec.q)
        else:
            local, d = _knn_scan(Q, self.X, kk, self.spec.q, chunk)
        return self.rows[local], d, truncated

    def query(self, x, k: int):
        """Neighbours of one encoded row as ``[(row_id, distance), ...], truncated``."""
        ids, d, trunc = self.query_many(np.asarray(x, dtype=float)[None, :], k)
        return [(int(i), float(v)) for i, v in zip(ids[0], d[0])], trunc


def build_index(p: Portfolio, group: int, spec: DistanceSpec, method: str = "auto") -> NeighborIndex:
    """Index the rows with ``s == group``.

    ``method`` is ``"scan"``, ``"tree"`` or ``"auto"`` (tree for large,
    low-dimensional reference sets).
    """
    rows = np.flatnonzero(p.s == group)
    if rows.size == 0:
        raise ValueError(f"group {group} has no rows")
    for name in spec.features:
        if name not in p.columns:
            raise KeyError(f"unknown feature {name!r}")
    enc = Encoder.fit(p, rows, spec)
    X = enc.transform(p, rows)
    X.flags.writeable = False
    if method == "auto":
        method = "tree" if rows.size >= 4000 and X.shape[1] <= 8 else "scan"
    if method not in ("scan", "tree"):
        raise ValueError(f"unknown search method {method!r}")
    tree = cKDTree(X) if method == "tree" else None
    return NeighborIndex(group, rows, X, enc, method, tree)


def cross_group_neighbors(p: Portfolio, spec: DistanceSpec, k: int, method: str = "auto"):
    """For every row, its ``k`` nearest rows of the opposite group.

    Returns ``(ids, dists, truncated)``; both arrays have shape ``(n, k)``.
    When the opposite group holds fewer than ``k`` rows the missing slots
    are ``-1`` / ``nan`` and ``truncated`` is True.
    """
    n = p.n
    ids_out = np.full((n, k), -1, dtype=np.int64)
    d_out = np.full((n, k), np.nan)
    truncated = False
    for g in (0, 1):
        rows = np.flatnonzero(p.s == g)
        if rows.size == 0:
            raise ValueError(f"group {g} has no rows")
        idx = build_index(p, 1 - g, spec, method)
        ids, d, trunc = idx.query_many(idx.encode(p, rows), k)
        truncated |= trunc
        ids_out[rows, : ids.shape[1]] = ids
        d_out[rows, : ids.shape[1]] = d
    return ids_out, d_out, truncated


def neighbor_mean(values: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Mean of ``values`` over each row's neighbour list (``-1`` slots skipped)."""
    valid = ids >= 0
    if valid.all():
        return values[ids].mean(axis=1)
    picked = np.where(valid, values[np.where(valid, ids, 0)], 0.0)
    return picked.sum(axis=1) / valid.sum(axis=1)


# -- hyperparameter tuning ---------------------------------------------------


@dataclass(frozen=True)
class TunerResult:
    spec: DistanceSpec
    k: int
    mean_distance: float
    mean_abs_delta: float
    objective: float
    table: tuple = ()  # (spec, k, mean_distance, mean_abs_delta, objective) per grid point


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def grid_terms(train: Portfolio, valid: Portfolio, predictions, spec: DistanceSpec, k: int):
    """Raw tuner terms for one grid point.

    The distance term is the mean distance from each validation row to its
    ``k`` nearest opposite-group training rows; the premium term is the mean
    absolute flip-test gap computed inside the validation set.
    """
    predictions = np.asarray(predictions, dtype=float)
    dist_sum, count = 0.0, 0
    for g in (0, 1):
        rows = np.flatnonzero(valid.s == g)
        if rows.size == 0:
            continue
        idx = build_index(train, 1 - g, spec)
        _, d, _ = idx.query_many(idx.encode(valid, rows), k)
        dist_sum += float(d.mean(axis=1).sum())
        count += rows.size
    ids, _, _ = cross_group_neighbors(valid, spec, k)
    delta = predictions - neighbor_mean(predictions, ids)
    return dist_sum / count, float(np.abs(delta).mean())


def tune_flip_knn(train: Portfolio, valid: Portfolio, predictions, specs: Sequence[DistanceSpec],
                  ks: Sequence[int], weight: float = 1.0) -> TunerResult:
    """Grid search over distance specs and neighbour counts.

    Minimises ``minmax(distance) + weight * minmax(|gap|)`` where each term
    is min-max scaled across the grid (a constant term scales to 0). Ties
    go to the earliest grid point.
    """
    grid = [(sp, int(k)) for sp in specs for k in ks]
    if not grid:
        raise ValueError("tuner grid is empty")
    if len(predictions) != valid.n:
        raise ValueError("predictions must align with validation rows")
    terms = np.array([grid_terms(train, valid, predictions, sp, k) for sp, k in grid])
    J = _minmax(terms[:, 0]) + weight * _minmax(terms[:, 1])
    best = int(np.argmin(J))
    table = tuple((sp, k, float(a), float(b), float(j)) for (sp, k), (a, b), j in zip(grid, terms, J))
    sp, k = grid[best]
    return TunerResult(sp, k, float(terms[best, 0]), float(terms[best, 1]), float(J[best]), table)
