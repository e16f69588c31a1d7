"""Pre-processing mitigation: feature deletion, linear decorrelation, fair-SMOTE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import BinningSpec, PURE_PREMIUM_BINS, Portfolio, SchemaError, write_csv
from .knn import DistanceSpec, Encoder, _knn_scan
from .metrics import contingency_hgr, hgr_kde

log = logging.getLogger(__name__)

PROTECTED_ROLES = ("target", "exposure", "claim_count")


# -- total deletion ---------------------------------------------------------------


def dependency_profile(p: Portfolio, features: Sequence[str] | None = None) -> list[tuple[str, float]]:
    """HGR between S and each feature, sorted by decreasing dependency.

    Quantitative features go through the KDE estimator; binary and
    categorical features use the exact contingency-table value.
    """
    features = list(features) if features is not None else list(p.features)
    out = []
    for name in features:
        if name == p.sensitive:
            continue
        if p.spec(name).kind == "quantitative":
            h = hgr_kde(p.s, p[name])
        else:
            h = contingency_hgr(p.s, p[name])
        out.append((name, float(h)))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


@dataclass(frozen=True)
class DeletionScenario:
    id: str
    deleted: tuple
    threshold: float | None = None

    def model_features(self, p: Portfolio) -> tuple:
        gone = set(self.deleted) | {p.sensitive}
        return tuple(c for c in p.features if c not in gone)

    def check(self, p: Portfolio) -> "DeletionScenario":
        for name in self.deleted:
            if name not in p.columns:
                raise SchemaError(f"scenario {self.id!r} deletes unknown column {name!r}")
            if p.spec(name).role in PROTECTED_ROLES:
                raise SchemaError(f"scenario {self.id!r} may not delete {p.spec(name).role} column {name!r}")
        return self


def scenarios_from_threshold(profile, thresholds: Sequence[float]) -> list[DeletionScenario]:
    """One scenario per threshold, deleting features with dependency above it.

    Scenarios with an identical deletion set are merged (first threshold kept).
    """
    seen = set()
    out = []
    for t in thresholds:
        if not 0 <= t <= 1:
            raise ValueError(f"threshold {t} outside [0, 1]")
        gone = tuple(name for name, h in profile if h > t)
        if gone in seen:
            continue
        seen.add(gone)
        out.append(DeletionScenario(f"delete>{t:g}", gone, float(t)))
    return out


# -- correlation remover -------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationRemover:
    """Removes the S-direction of each listed column, keeping column means.

    Stores per-column slopes so the same transform applies to new rows:
    ``x - alpha * slope * (s - s_mean)``.
    """

    alpha: float
    columns: tuple
    s_mean: float
    slopes: Mapping[str, float]

    @classmethod
    def fit(cls, p: Portfolio, alpha: float, columns: Sequence[str]) -> "CorrelationRemover":
        if not 0 <= alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        s = p.s.astype(float)
        sc = s - s.mean()
        ss = float(sc @ sc)
        if ss == 0:
            raise ValueError("sensitive column is constant; nothing to project on")
        slopes = {}
        for name in columns:
            if p.spec(name).kind != "quantitative":
                raise SchemaError(f"correlation remover needs quantitative columns, {name!r} is not")
            x = p[name]
            slopes[name] = float(sc @ (x - x.mean())) / ss
        return cls(float(alpha), tuple(columns), float(s.mean()), slopes)

    def transform(self, p: Portfolio) -> Portfolio:
        s = p.s.astype(float) - self.s_mean
        upd = {c: p[c] - self.alpha * self.slopes[c] * s for c in self.columns}
        return p.with_columns(upd)


def correlation_remover(p: Portfolio, alpha: float, columns: Sequence[str]) -> Portfolio:
    return CorrelationRemover.fit(p, alpha, columns).transform(p)


# -- fair-SMOTE --------------------------------------------------------------------


@dataclass(frozen=True)
class SmoteConfig:
    st: float = 0.8
    ft: float = 0.8
    bins: BinningSpec = PURE_PREMIUM_BINS
    seed: int = 0
    features: tuple | None = None  # neighbour-search columns; default: model features
    u_per_column: bool = False
    # when False, categorical columns are mixed only if st > u (see README)
    ungated_categorical: bool = False
    # 0 balances S within each bin; 1 also equalises every bin to the largest
    y_balance: float = 0.0
    # "error" or "skip": what to do when a cell that needs rows is empty
    on_empty: str = "error"

    def __post_init__(self):
        if self.on_empty not in ("error", "skip"):
            raise ValueError("SmoteConfig.on_empty must be 'error' or 'skip'")
        for name in ("st", "ft", "y_balance"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"SmoteConfig.{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class SmoteResult:
    portfolio: Portfolio
    synthetic: np.ndarray  # bool per output row
    source: np.ndarray  # chosen p row for synthetic rows, own id for originals
    bin: np.ndarray
    fallback_bins: tuple = field(default=())
    skipped_bins: tuple = field(default=())

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic.sum())

    def to_csv(self, path):
        return write_csv(self.portfolio, path, {
            "synthetic": self.synthetic.astype(int), "source_row": self.source, "bin": self.bin})


def smote_targets(bins: np.ndarray, s: np.ndarray, n_bins_present, y_balance: float) -> dict:
    """Per (bin, group) number of rows to add."""
    counts = {b: (int(((bins == b) & (s == 0)).sum()), int(((bins == b) & (s == 1)).sum()))
              for b in n_bins_present}
    top = max(max(c) for c in counts.values())
    out = {}
    for b, (c0, c1) in counts.items():
        target = max(c0, c1)
        if y_balance > 0:
            target = int(round(target + y_balance * (top - target)))
        out[b] = (target - c0, target - c1)
    return out


def _two_neighbors(X: np.ndarray, picks: np.ndarray, q: float) -> np.ndarray:
    """Two nearest cell rows to each picked row, excluding the row itself.

    Ties go to the lower cell index; an exact duplicate of the picked row
    counts as a neighbour.
    """
    uniq, inv = np.unique(picks, return_inverse=True)
    ids, _ = _knn_scan(X[uniq], X, 3, q, 512)
    out = np.empty((uniq.size, 2), dtype=np.int64)
    for r, (row, self_id) in enumerate(zip(ids, uniq)):
        others = row[row != self_id]
        out[r] = others[:2]
    return out[inv]


def _synthesize_cell(p: Portfolio, cell: np.ndarray, need: int, cfg: SmoteConfig, dspec: DistanceSpec,
                     rng: np.random.Generator, cols) -> tuple[dict, np.ndarray]:
    X = Encoder.fit(p, cell, dspec).transform(p, cell)
    j = rng.integers(0, cell.size, need)
    nb = _two_neighbors(X, j, dspec.q)
    ip, i1, i2 = cell[j], cell[nb[:, 0]], cell[nb[:, 1]]
    if cfg.u_per_column:
        u = rng.random((need, len(cols)))
    else:
        u = np.repeat(rng.random(need)[:, None], len(cols), axis=1)
    pick = rng.integers(0, 3, (need, len(cols)))
    out = {c: p[c][ip] for c in p.names}
    for k, spec in enumerate(cols):
        x = p[spec.name]
        on = cfg.st > u[:, k]
        if spec.role == "target" or spec.kind == "quantitative":
            val = np.where(on, x[ip] + cfg.ft * (x[i1] - x[i2]), x[ip])
        else:
            trio = np.stack([x[i1], x[i2], x[ip]], axis=1)
            mixed = trio[np.arange(need), pick[:, k]]
            gate = on if (spec.kind == "binary" or not cfg.ungated_categorical) else np.ones(need, bool)
            val = np.where(gate, mixed, x[ip])
        if spec.role == "target":
            val = np.maximum(val, 0.0)
        out[spec.name] = val
    return out, ip


def fair_smote(p: Portfolio, cfg: SmoteConfig) -> SmoteResult:
    """Balance S inside every target bin by appending synthetic rows.

    For each synthetic row: draw ``p`` from the under-represented cell,
    find its two nearest cell neighbours ``v1, v2`` and one ``u ~ U[0,1]``,
    then per column: binary and categorical take a uniform pick of the
    three values when ``st > u`` (else ``p``'s); quantitative columns and
    the target take ``x_p + ft * (x_v1 - x_v2)`` when ``st > u``.
    Exposure, claim-count and bookkeeping columns are copied from ``p``;
    the target is kept non-negative. Each (bin, group) cell draws from its
    own stream seeded by ``(seed, bin, group)``.
    """
    bins = cfg.bins.assign(p.y)
    s = p.s
    present = sorted(np.unique(bins).tolist())
    plan = smote_targets(bins, s, present, cfg.y_balance)
    feats = tuple(cfg.features) if cfg.features else tuple(c for c in p.features if c != p.sensitive)
    dspec = DistanceSpec("manhattan", feats)
    cols = [c for c in p.schema if c.role == "feature" and c.name != p.sensitive]
    if p.target:
        cols.append(p.spec(p.target))

    parts, sources, new_bins, fallback, skipped = [], [], [], [], []
    for b in present:
        for g in (0, 1):
            need = plan[b][g]
            if need <= 0:
                continue
            cell = np.flatnonzero((bins == b) & (s == g))
            if cell.size == 0:
                if cfg.on_empty == "skip":
                    log.warning("bin %d has no rows of group %d; left unbalanced", b, g)
                    skipped.append((b, g))
                    continue
                raise ValueError(f"bin {b} has no rows of group {g} to resample from")
            rng = np.random.default_rng([cfg.seed, b, g])
            if cell.size < 3:
                log.warning("bin %d group %d has %d rows; sampling with replacement", b, g, cell.size)
                fallback.append((b, g))
                ip = cell[rng.integers(0, cell.size, need)]
                block = {c: p[c][ip] for c in p.names}
            else:
                block, ip = _synthesize_cell(p, cell, need, cfg, dspec, rng, cols)
            parts.append(block)
            sources.append(ip)
            new_bins.append(np.full(need, b, dtype=np.int64))
    if not parts:
        return SmoteResult(p, np.zeros(p.n, bool), np.arange(p.n), bins, (), tuple(skipped))
    src = np.concatenate(sources)
    extra = Portfolio(p.schema, {c: np.concatenate([blk[c] for blk in parts]) for c in p.names},
                      levels=p.levels)
    out = p.concat(extra)
    out = Portfolio(out.schema, out.columns, provenance=(p.provenance + " +fair-smote").strip(),
                    levels=p.levels)
    synthetic = np.concatenate([np.zeros(p.n, bool), np.ones(src.size, bool)])
    return SmoteResult(out, synthetic, np.concatenate([np.arange(p.n), src]),
                       np.concatenate([bins] + new_bins), tuple(fallback), tuple(skipped))
