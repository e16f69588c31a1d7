"""Portfolio container, CSV ingestion, stratified splitting and target binning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("quantitative", "binary", "categorical")
ROLES = ("feature", "target", "sensitive", "exposure", "claim_count", "identifier")
SINGLE_ROLES = ("target", "exposure", "claim_count")


class SchemaError(ValueError):
    """Raised when a schema or a portfolio violates its column contract."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "quantitative"
    role: str = "feature"
    # optional explicit (level for 0, level for 1) for binary columns
    levels: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(self.levels))
            if self.kind == "binary" and len(self.levels) != 2:
                raise SchemaError(f"column {self.name!r}: binary levels must have length 2")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnSpec":
        return cls(
            name=str(d["name"]),
            kind=d.get("kind", "quantitative"),
            role=d.get("role", "feature"),
            levels=tuple(d["levels"]) if d.get("levels") is not None else None,
        )

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        return d


def validate_schema(schema: Sequence[ColumnSpec]) -> None:
    names = [c.name for c in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate column names: {dupes}")
    sens = [c for c in schema if c.role == "sensitive"]
    if len(sens) != 1:
        raise SchemaError(f"schema needs exactly one sensitive column, got {len(sens)}")
    if sens[0].kind != "binary":
        raise SchemaError(f"sensitive column {sens[0].name!r} must be declared binary")
    for role in SINGLE_ROLES:
        if sum(c.role == role for c in schema) > 1:
            raise SchemaError(f"at most one {role} column allowed")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Portfolio:
    """Immutable column store.

    Quantitative columns are float64, binary columns are int64 in {0, 1},
    categorical columns are numpy unicode arrays. Every array is read-only.
    """

    schema: tuple
    columns: Mapping[str, np.ndarray]
    provenance: str = ""
    levels: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        schema = tuple(self.schema)
        object.__setattr__(self, "schema", schema)
        validate_schema(schema)
        cols = {}
        n = None
        for spec in schema:
            if spec.name not in self.columns:
                raise SchemaError(f"missing column {spec.name!r}")
            a = np.asarray(self.columns[spec.name])
            if spec.kind == "quantitative":
                a = a.astype(np.float64)
            elif spec.kind == "binary":
                a = a.astype(np.int64)
                bad = np.flatnonzero((a != 0) & (a != 1))
                if bad.size:
                    raise SchemaError(f"binary column {spec.name!r} has non 0/1 value at row {bad[0]}")
            else:
                a = a.astype(str)
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise SchemaError(f"column {spec.name!r} has length {a.shape[0]}, expected {n}")
            cols[spec.name] = _freeze(a)
        if not n:
            raise SchemaError("portfolio must have at least one row")
        expo = self._role_name(schema, "exposure")
        if expo is not None:
            bad = np.flatnonzero(~(cols[expo] > 0))
            if bad.size:
                raise SchemaError(f"exposure non-positive at row {bad[0]}")
        levels = dict(self.levels)
        for spec in schema:
            if spec.kind == "categorical" and spec.name not in levels:
                levels[spec.name] = tuple(sorted(np.unique(cols[spec.name]).tolist()))
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "levels", levels)

    @staticmethod
    def _role_name(schema, role):
        for c in schema:
            if c.role == role:
                return c.name
        return None

    # -- column semantics -------------------------------------------------

    def __len__(self) -> int:
        return len(next(iter(self.columns.values())))

    @property
    def n(self) -> int:
        return len(self)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def spec(self, name: str) -> ColumnSpec:
        for c in self.schema:
            if c.name == name:
                return c
        raise KeyError(f"unknown column {name!r}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def role(self, role: str) -> str | None:
        return self._role_name(self.schema, role)

    @property
    def sensitive(self) -> str:
        return self.role("sensitive")

    @property
    def s(self) -> np.ndarray:
        return self.columns[self.sensitive]

    @property
    def target(self) -> str | None:
        return self.role("target")

    @property
    def y(self) -> np.ndarray:
        if self.target is None:
            raise SchemaError("portfolio has no target column")
        return self.columns[self.target]

    @property
    def exposure(self) -> np.ndarray | None:
        name = self.role("exposure")
        return None if name is None else self.columns[name]

    @property
    def features(self) -> list[str]:
        return [c.name for c in self.schema if c.role == "feature"]

    def group_counts(self) -> tuple[int, int]:
        n1 = int(self.s.sum())
        return self.n - n1, n1

    # -- derived portfolios ----------------------------------------------

    def take(self, rows) -> "Portfolio":
        rows = np.asarray(rows)
        return Portfolio(
            self.schema,
            {k: v[rows] for k, v in self.columns.items()},
            provenance=self.provenance,
            levels=self.levels,
        )

    def with_columns(self, updates: Mapping[str, np.ndarray], new_specs: Iterable[ColumnSpec] = ()) -> "Portfolio":
        cols = dict(self.columns)
        cols.update(updates)
        schema = list(self.schema) + list(new_specs)
        return Portfolio(tuple(schema), cols, provenance=self.provenance, levels=self.levels)

    def drop(self, names: Iterable[str]) -> "Portfolio":
        names = set(names)
        schema = tuple(c for c in self.schema if c.name not in names)
        return Portfolio(schema, {c.name: self.columns[c.name] for c in schema},
                         provenance=self.provenance, levels=self.levels)

    def concat(self, other: "Portfolio") -> "Portfolio":
        if [c.name for c in other.schema] != self.names:
            raise SchemaError("cannot concatenate portfolios with different schemas")
        cols = {k: np.concatenate([self.columns[k], other.columns[k]]) for k in self.names}
        return Portfolio(self.schema, cols, provenance=self.provenance, levels=self.levels)


# -- CSV -------------------------------------------------------------------


def _parse_cell(raw: str, spec: ColumnSpec, row: int):
    if raw is None or raw.strip() == "":
        return None
    raw = raw.strip()
    if spec.kind == "quantitative":
        try:
            v = float(raw)
        except ValueError:
            raise SchemaError(f"unparseable cell at row {row}, column {spec.name!r}: {raw!r}") from None
        if not math.isfinite(v):
            raise SchemaError(f"non-finite cell at row {row}, column {spec.name!r}: {raw!r}")
        return v
    return raw


def _binary_codes(values: list[str], spec: ColumnSpec) -> np.ndarray:
    distinct = sorted(set(values))
    if spec.levels is not None:
        mapping = {str(spec.levels[0]): 0, str(spec.levels[1]): 1}
        unknown = [v for v in distinct if v not in mapping]
        if unknown:
            raise SchemaError(f"column {spec.name!r}: value {unknown[0]!r} not in levels {spec.levels}")
        return np.array([mapping[v] for v in values], dtype=np.int64)
    if len(distinct) > 2:
        what = "sensitive column" if spec.role == "sensitive" else f"binary column {spec.name!r}"
        raise SchemaError(f"{what} not binary: {len(distinct)} distinct values")
    if set(distinct) <= {"0", "1"}:
        return np.array([int(v) for v in values], dtype=np.int64)
    try:
        num = sorted(set(float(v) for v in distinct))
        if set(num) <= {0.0, 1.0}:
            return np.array([int(float(v)) for v in values], dtype=np.int64)
    except ValueError:
        pass
    mapping = {lvl: i for i, lvl in enumerate(distinct)}
    return np.array([mapping[v] for v in values], dtype=np.int64)


def load_csv(path, schema: Sequence[ColumnSpec]) -> Portfolio:
    """Read a comma-delimited UTF-8 file with a header row into a Portfolio.

    Rows holding an empty cell are dropped; the count is carried in the
    provenance string. Parse failures raise ``SchemaError`` naming the
    1-based data row and the column.
    """
    schema = tuple(schema)
    validate_schema(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names in header: {dupes}")
        missing = [c.name for c in schema if c.name not in header]
        if missing:
            raise SchemaError(f"header lacks schema columns: {missing}")
        pos = {c.name: header.index(c.name) for c in schema}
        raw: dict[str, list] = {c.name: [] for c in schema}
        dropped = 0
        for i, line in enumerate(reader, start=1):
            if not line:
                continue
            cells = {}
            complete = True
            for c in schema:
                cell = line[pos[c.name]] if pos[c.name] < len(line) else ""
                v = _parse_cell(cell, c, i)
                if v is None:
                    complete = False
                    break
                if c.role == "exposure" and not v > 0:
                    raise SchemaError(f"exposure non-positive at row {i}")
                cells[c.name] = v
            if not complete:
                dropped += 1
                continue
            for k, v in cells.items():
                raw[k].append(v)
    cols = {}
    for c in schema:
        if c.kind == "binary":
            cols[c.name] = _binary_codes(raw[c.name], c)
        elif c.kind == "quantitative":
            cols[c.name] = np.array(raw[c.name], dtype=np.float64)
        else:
            cols[c.name] = np.array(raw[c.name], dtype=str)
    prov = str(path) if not dropped else f"{path} (rejected {dropped} rows with missing cells)"
    return Portfolio(schema, cols, provenance=prov)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(p: Portfolio, path, extra: Mapping[str, Sequence] | None = None) -> Path:
    """Write ``p`` (plus optional extra columns) with round-trippable floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = dict(extra or {})
    names = p.names + list(extra)
    data = [p[c] for c in p.names] + [np.asarray(v) for v in extra.values()]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(p.n):
            w.writerow([_fmt(col[i]) for col in data])
    return path


# -- split ------------------------------------------------------------------


def split(p: Portfolio, test_fraction: float, seed: int) -> tuple[Portfolio, Portfolio]:
    """Stratified (on S) train/test partition.

    The total test size is ``round(n * test_fraction)``; it is shared between
    the groups by largest remainder so each group lands within one row of its
    proportional share.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = p.n
    if n < 2:
        raise ValueError("split needs at least two rows")
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"test_fraction {test_fraction} yields an empty partition for n={n}")
    s = p.s
    groups = [np.flatnonzero(s == g) for g in (0, 1)]
    exact = [len(g) * n_test / n for g in groups]
    take = [int(math.floor(e)) for e in exact]
    order = sorted(range(2), key=lambda j: (-(exact[j] - take[j]), j))
    for j in order[: n_test - sum(take)]:
        take[j] += 1
    rng = np.random.default_rng(seed)
    test_rows = []
    for g, t in zip(groups, take):
        test_rows.append(rng.permutation(g)[:t])
    test_idx = np.sort(np.concatenate(test_rows))
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return p.take(np.flatnonzero(~mask)), p.take(test_idx)


def split_indices(p: Portfolio, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    train, test = split(p.with_columns({"__row": np.arange(p.n, dtype=float)},
                                       [ColumnSpec("__row", "quantitative", "identifier")]),
                        test_fraction, seed)
    return train["__row"].astype(np.int64), test["__row"].astype(np.int64)


# -- binning ----------------------------------------------------------------


@dataclass(frozen=True)
class BinningSpec:
    """Right-closed bins ``(e[i], e[i+1]]`` with an optional dedicated zero bin.

    With ``zero_bin`` the value 0 maps to bin 1 and the interval bins are
    numbered from 2. ``open_upper`` appends a final ``(e[-1], inf)`` bin.
    """

    edges: tuple
    zero_bin: bool = True
    open_upper: bool = True

    def __post_init__(self):
        e = tuple(float(x) for x in self.edges)
        if len(e) < 1 or any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("bin edges must be strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def n_bins(self) -> int:
        return int(self.zero_bin) + len(self.edges) - 1 + int(self.open_upper)

    def assign(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        e = np.asarray(self.edges)
        # index j such that e[j-1] < y <= e[j]
        j = np.searchsorted(e, y, side="left")
        out = j.astype(np.int64)  # interval bins numbered 1.. before offset
        too_low = (y <= e[0]) & ~((y == 0) & self.zero_bin)
        too_high = y > e[-1]
        if too_low.any():
            i = np.flatnonzero(too_low)[0]
            raise ValueError(f"target value {y[i]} at row {i} below the first edge")
        if too_high.any() and not self.open_upper:
            i = np.flatnonzero(too_high)[0]
            raise ValueError(f"target value {y[i]} at row {i} above the final edge and no open upper bin")
        out = out + int(self.zero_bin)
        if self.zero_bin:
            out[y == 0] = 1
        return out


# Seven-bin layout used for pure premiums: {0}, (0,250], (250,500], ...
PURE_PREMIUM_BINS = BinningSpec(edges=(0, 250, 500, 750, 1000, 1500), zero_bin=True, open_upper=True)


def bin_target(p: Portfolio, spec: BinningSpec) -> np.ndarray:
    return spec.assign(p.y)
