"""Tabular datasets, CSV ingestion, label binning and distribution-shaped test splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
DISTRIBUTIONS = ("balanced", "normal", "inverse")
STD_FLOOR = 1e-12


class DataError(ValueError):
    """Raised for malformed input data or invalid split requests."""


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[tuple[str, str], ...]
    target_column: str

    def __post_init__(self):
        cols = tuple((str(n), str(k)) for n, k in self.columns)
        object.__setattr__(self, "columns", cols)
        names = [n for n, _ in cols]
        if not names:
            raise DataError("schema needs at least one feature column")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate feature column names in {names}")
        if self.target_column in names:
            raise DataError(f"target column {self.target_column!r} is also listed as a feature")
        for name, kind in cols:
            if kind not in (NUMERIC, CATEGORICAL):
                raise DataError(f"column {name!r}: unknown kind {kind!r}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def numeric_mask(self) -> np.ndarray:
        return np.array([k == NUMERIC for _, k in self.columns])

    def to_dict(self) -> dict:
        return {
            "target": self.target_column,
            "columns": [{"name": n, "kind": k} for n, k in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        cols = []
        for c in d["columns"]:
            if isinstance(c, dict):
                cols.append((c["name"], c.get("kind", NUMERIC)))
            else:
                cols.append(tuple(c))
        return cls(tuple(cols), d["target"])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Feature matrix plus continuous targets.

    Categorical columns hold integer codes (as floats) indexing ``code_tables[name]``.
    ``row_ids`` identify original rows; synthetic rows carry id -1.
    """

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    code_tables: dict = field(default_factory=dict)
    row_ids: np.ndarray | None = None
    synthetic: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if len(self.schema.columns) == 1 else X.reshape(0, len(self.schema.columns))
        if X.shape != (len(y), len(self.schema.columns)):
            raise DataError(
                f"feature matrix shape {X.shape} does not match {len(y)} rows x {len(self.schema.columns)} columns"
            )
        if not np.all(np.isfinite(y)):
            raise DataError("targets must be finite")
        for j, (name, kind) in enumerate(self.schema.columns):
            if kind != CATEGORICAL:
                continue
            table = self.code_tables.get(name)
            if table is None:
                raise DataError(f"categorical column {name!r} has no code table")
            codes = X[:, j]
            if len(codes) and (np.any(codes != np.round(codes)) or codes.min() < 0 or codes.max() >= len(table)):
                raise DataError(f"categorical column {name!r} has codes outside its table")
        row_ids = np.arange(len(y)) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        synthetic = np.zeros(len(y), dtype=bool) if self.synthetic is None else np.asarray(self.synthetic, dtype=bool)
        tables = {k: tuple(v) for k, v in self.code_tables.items()}
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "row_ids", _frozen(row_ids))
        object.__setattr__(self, "synthetic", _frozen(synthetic))
        object.__setattr__(self, "code_tables", tables)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return TabularDataset(
            self.schema, self.X[idx], self.y[idx], self.code_tables, self.row_ids[idx], self.synthetic[idx]
        )

    def replace(self, X=None, y=None) -> "TabularDataset":
        return TabularDataset(
            self.schema,
            self.X if X is None else X,
            self.y if y is None else y,
            self.code_tables,
            self.row_ids,
            self.synthetic,
        )

    def append(self, X: np.ndarray, y: np.ndarray, synthetic: bool = True) -> "TabularDataset":
        """Return a new dataset with extra rows (marked synthetic, id -1) at the end."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n_features)
        y = np.asarray(y, dtype=float).reshape(-1)
        return TabularDataset(
            self.schema,
            np.vstack([self.X, X]),
            np.concatenate([self.y, y]),
            self.code_tables,
            np.concatenate([self.row_ids, np.full(len(y), -1, dtype=np.int64)]),
            np.concatenate([self.synthetic, np.full(len(y), synthetic)]),
        )

    def equals(self, other: "TabularDataset") -> bool:
        return (
            self.schema == other.schema
            and self.code_tables == other.code_tables
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.row_ids, other.row_ids)
            and np.array_equal(self.synthetic, other.synthetic)
        )


# ---------------------------------------------------------------- CSV I/O


def _parse_float(token: str, what: str, lineno: int) -> float:
    token = token.strip()
    if token == "":
        raise DataError(f"line {lineno}: missing value in column {what!r}")
    try:
        v = float(token)
    except ValueError:
        raise DataError(f"line {lineno}: cannot parse {token!r} as a number in column {what!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite value {token!r} in column {what!r}")
    return v


def load_csv(path, schema: FeatureSchema, code_tables: dict | None = None) -> TabularDataset:
    """Read a headered CSV into a dataset following ``schema``.

    Extra columns are ignored, except a boolean ``synthetic`` column which is
    read back as the synthetic flag. Categorical values are coded in order of
    first appearance unless ``code_tables`` fixes the coding.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    tables: dict[str, list] = {k: list(v) for k, v in (code_tables or {}).items()}
    lookups = {k: {v: i for i, v in enumerate(t)} for k, t in tables.items()}
    fixed = set(tables)
    X_rows, y_rows, synth = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [n for n in schema.names + [schema.target_column] if n not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing} in header")
        pos = [header.index(n) for n in schema.names]
        tpos = header.index(schema.target_column)
        spos = header.index("synthetic") if "synthetic" in header else None
        for name, kind in schema.columns:
            if kind == CATEGORICAL:
                tables.setdefault(name, [])
                lookups.setdefault(name, {})
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not t.strip() for t in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            row = []
            for (name, kind), p in zip(schema.columns, pos):
                tok = rec[p].strip()
                if kind == NUMERIC:
                    row.append(_parse_float(tok, name, lineno))
                    continue
                if tok == "":
                    raise DataError(f"line {lineno}: missing value in column {name!r}")
                look = lookups[name]
                if tok not in look:
                    if name in fixed:
                        raise DataError(f"line {lineno}: unknown category {tok!r} in column {name!r}")
                    look[tok] = len(tables[name])
                    tables[name].append(tok)
                row.append(float(look[tok]))
            X_rows.append(row)
            y_rows.append(_parse_float(rec[tpos], schema.target_column, lineno))
            if spos is not None:
                synth.append(rec[spos].strip().lower() in ("1", "true", "yes"))
    X = np.array(X_rows, dtype=float).reshape(len(y_rows), len(schema.columns))
    return TabularDataset(
        schema, X, np.array(y_rows), tables, synthetic=np.array(synth, dtype=bool) if spos is not None else None
    )


def read_schema(path) -> tuple[FeatureSchema, dict | None]:
    """Load a JSON schema file: ``{"target", "columns", optional "code_tables"}``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such schema file: {path}")
    try:
        d = json.loads(path.read_text())
        return FeatureSchema.from_dict(d), d.get("code_tables")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed schema ({exc})") from None


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: TabularDataset, path, with_flags: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kinds = [k for _, k in ds.schema.columns]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ds.schema.names + [ds.schema.target_column]
        if with_flags:
            header += ["row_id", "synthetic"]
        w.writerow(header)
        for i in range(len(ds)):
            row = []
            for j, (name, kind) in enumerate(ds.schema.columns):
                v = ds.X[i, j]
                row.append(ds.code_tables[name][int(v)] if kind == CATEGORICAL else _fmt(v))
            row.append(_fmt(ds.y[i]))
            if with_flags:
                row += [int(ds.row_ids[i]), int(ds.synthetic[i])]
            w.writerow(row)


def read_flagged_csv(path, schema: FeatureSchema, code_tables: dict) -> TabularDataset:
    """Inverse of ``write_csv(..., with_flags=True)``; restores row ids and flags."""
    ds = load_csv(path, schema, code_tables)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        ids = [int(r["row_id"]) for r in reader]
    return TabularDataset(ds.schema, ds.X, ds.y, ds.code_tables, np.array(ids, dtype=np.int64), ds.synthetic)


# ---------------------------------------------------------------- binning


@dataclass(frozen=True)
class BinningScheme:
    bin_width: float
    origin: float
    num_bins: int

    def __post_init__(self):
        if not self.bin_width > 0:
            raise DataError("bin_width must be positive")
        if int(self.num_bins) < 1:
            raise DataError("num_bins must be at least 1")

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.num_bins + 1)

    def index(self, y):
        """Vectorised :func:`bin_index`."""
        b = np.floor((np.asarray(y, dtype=float) - self.origin) / self.bin_width)
        return np.clip(b, 0, self.num_bins - 1).astype(np.int64)

    @classmethod
    def covering(cls, y, bin_width: float, origin: float | None = None, num_bins: int | None = None):
        y = np.asarray(y, dtype=float)
        origin = float(np.floor(y.min() / bin_width) * bin_width) if origin is None else origin
        if num_bins is None:
            num_bins = int(np.floor((y.max() - origin) / bin_width)) + 1
        return cls(bin_width, origin, max(1, num_bins))


def bin_index(y: float, scheme: BinningScheme) -> int:
    return int(scheme.index(y))


def bin_counts(y, scheme: BinningScheme) -> np.ndarray:
    return np.bincount(scheme.index(y), minlength=scheme.num_bins)


def bin_frequencies(ds: TabularDataset | np.ndarray, scheme: BinningScheme) -> np.ndarray:
    y = ds.y if isinstance(ds, TabularDataset) else np.asarray(ds)
    if len(y) == 0:
        raise DataError("cannot compute bin frequencies of an empty dataset")
    return bin_counts(y, scheme) / len(y)


def inverse_weights(freqs) -> np.ndarray:
    """Per-bin weights proportional to 1/f over the non-empty bins, summing to one."""
    f = np.asarray(freqs, dtype=float)
    w = np.zeros_like(f)
    nz = f > 0
    w[nz] = 1.0 / f[nz]
    return w / w.sum()


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``total * weights`` to integers summing to ``total``."""
    raw = total * weights / weights.sum()
    out = np.floor(raw).astype(np.int64)
    short = total - out.sum()
    if short > 0:
        order = np.lexsort((np.arange(len(raw)), -(raw - out)))
        out[order[:short]] += 1
    return out


@dataclass(eq=False)
class SplitBundle:
    train: TabularDataset
    test_balanced: TabularDataset
    test_normal: TabularDataset
    test_inverse: TabularDataset
    bin_frequencies_train: np.ndarray
    seed: int
    shortfall_flags: dict
    test_pool_fraction: float = 0.2
    targets: dict = field(default_factory=dict)

    def test(self, distribution: str) -> TabularDataset:
        return getattr(self, f"test_{distribution}")

    def test_pool(self) -> TabularDataset:
        """All held-out rows of the three test sets, ordered by original row id."""
        parts = [self.test(d) for d in DISTRIBUTIONS]
        ids = np.concatenate([p.row_ids for p in parts])
        order = np.argsort(ids, kind="stable")
        return TabularDataset(
            self.train.schema,
            np.vstack([p.X for p in parts])[order],
            np.concatenate([p.y for p in parts])[order],
            self.train.code_tables,
            ids[order],
        )

    def manifest(self, scheme: BinningScheme) -> dict:
        return {
            "seed": int(self.seed),
            "test_pool_fraction": float(self.test_pool_fraction),
            "shared_pool": True,
            "binning": {"bin_width": scheme.bin_width, "origin": scheme.origin, "num_bins": scheme.num_bins},
            "train_bin_counts": bin_counts(self.train.y, scheme).tolist(),
            "bin_frequencies_train": [float(v) for v in self.bin_frequencies_train],
            "test_bin_counts": {d: bin_counts(self.test(d).y, scheme).tolist() for d in DISTRIBUTIONS},
            "test_bin_targets": {d: [int(v) for v in self.targets.get(d, [])] for d in DISTRIBUTIONS},
            "shortfall_flags": {d: [bool(v) for v in self.shortfall_flags[d]] for d in DISTRIBUTIONS},
            "sizes": {"train": len(self.train), **{d: len(self.test(d)) for d in DISTRIBUTIONS}},
        }


def make_splits(
    ds: TabularDataset, scheme: BinningScheme, test_pool_fraction: float = 0.2, seed: int = 0
) -> SplitBundle:
    """Carve a training set and balanced/normal/inverse test sets out of ``ds``.

    A stratified test pool (``floor(fraction * count)`` rows per bin) is drawn first.
    All three test sets use the same total size ``c* x K`` (``K`` non-empty training
    bins, ``c*`` the median pool bin count) with per-bin targets shaped uniform,
    like the training frequencies, or like their reciprocal. When the demands
    on one bin exceed its pool rows, the rows are apportioned in proportion
    to demand so the three sets stay disjoint; unmet targets raise the bin's
    shortfall flag.
    """
    if not 0 < test_pool_fraction < 0.5:
        raise DataError("test_pool_fraction must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    bins = scheme.index(ds.y)
    B = scheme.num_bins
    pool_by_bin: list[np.ndarray] = []
    train_idx = []
    for b in range(B):
        members = np.flatnonzero(bins == b)
        members = members[rng.permutation(len(members))]
        k = int(math.floor(test_pool_fraction * len(members)))
        pool_by_bin.append(members[:k])
        train_idx.append(members[k:])
    pool_counts = np.array([len(p) for p in pool_by_bin])
    if pool_counts.sum() == 0:
        raise DataError("test pool is empty in every bin; increase data or test_pool_fraction")
    train_idx = np.sort(np.concatenate(train_idx))
    train_counts = np.bincount(bins[train_idx], minlength=B)
    freqs = train_counts / train_counts.sum()
    nonempty = train_counts > 0

    c_star = max(1, int(math.floor(np.median(pool_counts[nonempty]))))
    total = c_star * int(nonempty.sum())
    shape = {
        "balanced": nonempty.astype(float),
        "normal": freqs,
        "inverse": inverse_weights(freqs),
    }
    targets = {d: _apportion(total, shape[d]) for d in DISTRIBUTIONS}
    # balanced targets are exactly c* per non-empty bin
    targets["balanced"] = np.where(nonempty, c_star, 0)

    chosen = {d: [] for d in DISTRIBUTIONS}
    flags = {d: np.zeros(B, dtype=bool) for d in DISTRIBUTIONS}
    for b in range(B):
        demand = np.array([targets[d][b] for d in DISTRIBUTIONS])
        avail = pool_counts[b]
        if demand.sum() <= avail:
            alloc = demand
        else:
            alloc = np.minimum(_apportion(avail, demand.astype(float)), demand)
        start = 0
        for d, a in zip(DISTRIBUTIONS, alloc):
            chosen[d].append(pool_by_bin[b][start : start + a])
            start += a
            flags[d][b] = a < targets[d][b]

    sets = {d: ds.take(np.sort(np.concatenate(chosen[d]).astype(np.int64))) for d in DISTRIBUTIONS}
    return SplitBundle(
        train=ds.take(train_idx),
        test_balanced=sets["balanced"],
        test_normal=sets["normal"],
        test_inverse=sets["inverse"],
        bin_frequencies_train=freqs,
        seed=seed,
        shortfall_flags=flags,
        test_pool_fraction=test_pool_fraction,
        targets=targets,
    )


def save_splits(bundle: SplitBundle, scheme: BinningScheme, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(bundle.train, out / "train.csv", with_flags=True)
    for d in DISTRIBUTIONS:
        write_csv(bundle.test(d), out / f"test_{d}.csv", with_flags=True)
    meta = bundle.manifest(scheme)
    meta["schema"] = bundle.train.schema.to_dict()
    meta["code_tables"] = {k: list(v) for k, v in bundle.train.code_tables.items()}
    (out / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_splits(out_dir) -> tuple[SplitBundle, BinningScheme]:
    out = Path(out_dir)
    meta = json.loads((out / "manifest.json").read_text())
    schema = FeatureSchema.from_dict(meta["schema"])
    tables = meta["code_tables"]
    scheme = BinningScheme(**meta["binning"])
    parts = {name: read_flagged_csv(out / f"{name}.csv", schema, tables) for name in
             ["train"] + [f"test_{d}" for d in DISTRIBUTIONS]}
    bundle = SplitBundle(
        train=parts["train"],
        test_balanced=parts["test_balanced"],
        test_normal=parts["test_normal"],
        test_inverse=parts["test_inverse"],
        bin_frequencies_train=np.array(meta["bin_frequencies_train"]),
        seed=meta["seed"],
        shortfall_flags={d: np.array(v) for d, v in meta["shortfall_flags"].items()},
        test_pool_fraction=meta["test_pool_fraction"],
        targets={d: np.array(v) for d, v in meta["test_bin_targets"].items()},
    )
    return bundle, scheme


# ---------------------------------------------------------------- scaling


@dataclass(frozen=True)
class Scaler:
    """Per-column mean/stddev for numeric features; categorical columns get (0, 1)."""

    mean: np.ndarray
    std: np.ndarray
    numeric_mask: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "numeric_mask": [bool(v) for v in self.numeric_mask],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float), np.array(d["numeric_mask"]))


def fit_scaler(ds: TabularDataset | np.ndarray, numeric_mask: Sequence[bool] | None = None) -> Scaler:
    if isinstance(ds, TabularDataset):
        X, numeric_mask = ds.X, ds.schema.numeric_mask
    else:
        X = np.asarray(ds, dtype=float)
        numeric_mask = np.ones(X.shape[1], dtype=bool) if numeric_mask is None else np.asarray(numeric_mask)
    mean = X.mean(axis=0)
    # constant columns: use the exact value so they scale to exact zeros
    const = np.ptp(X, axis=0) == 0
    mean = np.where(const, X[0], mean)
    mean = np.where(numeric_mask, mean, 0.0)
    std = np.where(numeric_mask, np.maximum(X.std(axis=0), STD_FLOOR), 1.0)
    return Scaler(mean, std, np.asarray(numeric_mask, dtype=bool))


def apply_scaler(ds, scaler: Scaler):
    if isinstance(ds, TabularDataset):
        return ds.replace(X=(ds.X - scaler.mean) / scaler.std)
    return (np.asarray(ds, dtype=float) - scaler.mean) / scaler.std


def invert_scaler(ds, scaler: Scaler):
    if isinstance(ds, TabularDataset):
        return ds.replace(X=ds.X * scaler.std + scaler.mean)
    return np.asarray(ds, dtype=float) * scaler.std + scaler.mean
