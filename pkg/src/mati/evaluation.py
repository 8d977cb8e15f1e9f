"""Metrics and reports over the balanced / normal / inverse test distributions."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .data import DISTRIBUTIONS, BinningScheme, SplitBundle, TabularDataset, bin_counts
from .gmm import GmmModel

MAPE_EPS = 1e-8
SHOTS = ("many", "medium", "few")


class EvalError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if len(pred) != len(truth):
        raise EvalError(f"length mismatch: {len(pred)} predictions vs {len(truth)} targets")
    if len(pred) == 0:
        raise EvalError("cannot score empty vectors")
    return pred, truth


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(math.sqrt(np.mean((p - t) ** 2)))


def mape(pred, truth) -> tuple[float, int]:
    """Mean absolute percentage error (percent) and the number of skipped near-zero targets."""
    p, t = _pair(pred, truth)
    keep = np.abs(t) >= MAPE_EPS
    skipped = int((~keep).sum())
    if not keep.any():
        return float("nan"), skipped
    return float(100.0 * np.mean(np.abs(p[keep] - t[keep]) / np.abs(t[keep]))), skipped


@dataclass
class MetricSet:
    mae: float
    rmse: float
    mape: float
    n: int
    mape_skipped: int = 0

    @classmethod
    def of(cls, pred, truth) -> "MetricSet":
        m, skipped = mape(pred, truth)
        return cls(mae(pred, truth), rmse(pred, truth), m, len(np.asarray(truth)), skipped)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape, "n": self.n, "mape_skipped": self.mape_skipped}


@dataclass
class ShotThresholds:
    many: int = 100
    few: int = 20

    def label(self, train_count: int) -> str:
        if train_count > self.many:
            return "many"
        if train_count < self.few:
            return "few"
        return "medium"


@dataclass
class EvalReport:
    overall: dict = field(default_factory=dict)  # distribution -> MetricSet
    per_bin: dict = field(default_factory=dict)  # distribution -> {bin: MetricSet}
    shots: dict = field(default_factory=dict)  # distribution -> {shot: MetricSet}
    metadata: dict = field(default_factory=dict)

    def mean_over_distributions(self, metric: str = "mae") -> float:
        return float(np.mean([getattr(self.overall[d], metric) for d in self.overall]))

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "overall": {d: m.to_dict() for d, m in self.overall.items()},
            "per_bin": {d: {str(b): m.to_dict() for b, m in bins.items()} for d, bins in self.per_bin.items()},
            "shots": {d: {s: m.to_dict() for s, m in sh.items()} for d, sh in self.shots.items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distribution", "bin", "mae", "rmse", "mape", "n", "mape_skipped"])
        for d in self.overall:
            rows = [("all", self.overall[d])] + [(str(b), m) for b, m in self.per_bin[d].items()]
            for b, m in rows:
                w.writerow([d, b, repr(m.mae), repr(m.rmse), repr(m.mape), m.n, m.mape_skipped])
        return buf.getvalue()

    def save(self, stem) -> None:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        stem.with_suffix(".csv").write_text(self.to_csv())


def _score_set(pred, ds: TabularDataset, scheme: BinningScheme, train_counts, shots: ShotThresholds):
    overall = MetricSet.of(pred, ds.y)
    bins = scheme.index(ds.y)
    per_bin = {int(b): MetricSet.of(pred[bins == b], ds.y[bins == b]) for b in np.unique(bins)}
    labels = np.array([shots.label(int(train_counts[b])) for b in bins])
    per_shot = {s: MetricSet.of(pred[labels == s], ds.y[labels == s]) for s in SHOTS if (labels == s).any()}
    return overall, per_bin, per_shot


def evaluate(predict_fn: Callable | Mapping[str, Callable], bundle: SplitBundle, scheme: BinningScheme,
             shots: ShotThresholds | None = None, metadata: dict | None = None) -> EvalReport:
    """Score a predictor on all three test distributions.

    ``predict_fn`` maps a feature matrix to predictions, or is a mapping from
    distribution name to such a function when the predictor adapts per test set.
    Shot regions come from the training bin counts.
    """
    shots = shots or ShotThresholds()
    train_counts = bin_counts(bundle.train.y, scheme)
    report = EvalReport(metadata=dict(metadata or {}))
    for d in DISTRIBUTIONS:
        ds = bundle.test(d)
        if len(ds) == 0:
            continue
        fn = predict_fn[d] if isinstance(predict_fn, Mapping) else predict_fn
        pred = np.asarray(fn(ds.X), dtype=float).reshape(-1)
        report.overall[d], report.per_bin[d], report.shots[d] = _score_set(pred, ds, scheme, train_counts, shots)
    return report


def region_test_sets(pool: TabularDataset, gmm: GmmModel, per_region: int, seed: int = 0):
    """Up to ``per_region`` pool rows with target in [mu_n - sigma_n, mu_n + sigma_n] per component.

    Returns (sets, empty_flags).
    """
    if len(pool) == 0:
        raise EvalError("empty pool")
    rng = np.random.default_rng(seed)
    sets, empty = [], []
    for c in gmm.components:
        inside = np.flatnonzero((pool.y >= c.mean - c.stddev) & (pool.y <= c.mean + c.stddev))
        take = rng.choice(inside, size=min(per_region, len(inside)), replace=False) if len(inside) else inside
        sets.append(pool.take(np.sort(take)))
        empty.append(len(inside) == 0)
    return sets, empty


def region_expert_table(experts, region_sets) -> np.ndarray:
    """MAE matrix: rows are experts, columns are region test sets."""
    table = np.full((len(experts), len(region_sets)), np.nan)
    for i, e in enumerate(experts):
        for j, ds in enumerate(region_sets):
            if len(ds):
                table[i, j] = mae(e.predict(ds.X), ds.y)
    return table


def perturbation_sweep(experts, bundle: SplitBundle, ratios, cfg, distribution: str = "balanced"):
    """Aggregate and score once per corruption ratio with everything else fixed.

    Returns a list of (ratio, MetricSet) on the chosen test distribution.
    """
    from dataclasses import replace

    from .ttsa import aggregate, predict_aggregated

    ds = bundle.test(distribution)
    rows = []
    for r in ratios:
        if not 0 <= r <= 1:
            raise EvalError(f"ratio {r} outside [0, 1]")
        w = aggregate(experts, ds.X, replace(cfg, corrupt_ratio=float(r)))
        rows.append((float(r), MetricSet.of(predict_aggregated(experts, w, ds.X), ds.y)))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ratio", "mae", "rmse", "mape", "n"])
    for r, m in rows:
        w.writerow([repr(r), repr(m.mae), repr(m.rmse), repr(m.mape), m.n])
    return buf.getvalue()


def gap_center_identity(values) -> tuple[float, float]:
    """Ordered-pair sum of squared differences and 2*|Z|*sum((y - mean)^2).

    The two numbers agree up to round-off for any input.
    """
    y = np.asarray(values, dtype=float).reshape(-1)
    if len(y) < 2:
        raise EvalError("need at least two values")
    n = len(y)
    pairwise = np.sum((y[:, None] - y[None, :]) ** 2)
    centre = y.mean()
    scaled = 2.0 * n * float(np.sum((y - centre) ** 2))
    return float(pairwise), scaled
