"""SMOGN-style oversampling for regression.

Rare target regions are found with a relevance function (or given as an
explicit target range) and grown with synthetic rows. Each synthetic row is
either a SMOTER interpolation between a seed and one of its k nearest
neighbours, or a Gaussian perturbation of the seed when that neighbour is
too far away to interpolate safely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import TabularDataset

log = logging.getLogger(__name__)

SMOTER = 0
NOISE = 1
NOISE_CLIP = 6.0


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    k_neighbors: int = 5
    relevance_threshold: float = 0.8
    pert: float = 0.02
    # "mean" (mean bump size), "max" (largest bump) or a multiple of the mean bump size
    oversample_target: str | float = "mean"
    alpha: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise SynthError("k_neighbors must be >= 1")
        if not 0 < self.relevance_threshold < 1:
            raise SynthError("relevance_threshold must lie in (0, 1)")
        if not self.pert > 0:
            raise SynthError("pert must be positive")
        if not self.alpha > 0:
            raise SynthError("alpha must be positive")
        t = self.oversample_target
        if not (t in ("mean", "max") or (isinstance(t, (int, float)) and t > 0)):
            raise SynthError(f"unknown oversample_target {t!r}")


# ---------------------------------------------------------------- relevance


@dataclass(frozen=True)
class RelevanceFn:
    """Piecewise cubic Hermite interpolation through (y, relevance, slope) control points.

    With zero slopes every segment is monotone between its end values.
    Outside the control range the nearest end value is returned.
    """

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        pts = tuple(sorted((float(a), float(b), float(c)) for a, b, c in self.points))
        if not pts:
            raise SynthError("relevance function needs at least one control point")
        for _, r, _ in pts:
            if not 0 <= r <= 1:
                raise SynthError("relevance values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        xs = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        ms = np.array([p[2] for p in self.points])
        out = np.interp(y, xs, vs)  # handles clamping and single-point case
        if len(xs) > 1:
            k = np.clip(np.searchsorted(xs, y, side="right") - 1, 0, len(xs) - 2)
            inside = (y >= xs[0]) & (y <= xs[-1])
            h = xs[k + 1] - xs[k]
            yc = np.clip(y, xs[0], xs[-1])
            t = np.where(h > 0, (yc - xs[k]) / np.where(h > 0, h, 1.0), 0.0)
            t2, t3 = t * t, t * t * t
            val = (
                (2 * t3 - 3 * t2 + 1) * vs[k]
                + (t3 - 2 * t2 + t) * h * ms[k]
                + (-2 * t3 + 3 * t2) * vs[k + 1]
                + (t3 - t2) * h * ms[k + 1]
            )
            out = np.where(inside, np.clip(val, 0.0, 1.0), out)
        return out if out.ndim else float(out)


def box_plot_stats(labels, coef: float = 1.5):
    """Tukey statistics: (lower adjacent value, median, upper adjacent value)."""
    y = np.sort(np.asarray(labels, dtype=float))
    q1, med, q3 = np.quantile(y, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo = y[y >= q1 - coef * iqr].min()
    hi = y[y <= q3 + coef * iqr].max()
    return float(lo), float(med), float(hi)


def build_relevance(labels) -> RelevanceFn:
    """Relevance 1 at the adjacent values (and beyond), 0 at the median."""
    y = np.asarray(labels, dtype=float)
    if len(np.unique(y)) < 3:
        raise SynthError("need at least 3 distinct labels to define rare regions")
    lo, med, hi = box_plot_stats(y)
    pts = [(med, 0.0, 0.0)]
    if lo < med:
        pts.append((lo, 1.0, 0.0))
    if hi > med:
        pts.append((hi, 1.0, 0.0))
    return RelevanceFn(tuple(pts))


# ---------------------------------------------------------------- distances


def feature_ranges(ds: TabularDataset) -> np.ndarray:
    return np.ptp(ds.X, axis=0) if len(ds) else np.zeros(ds.n_features)


def heom_distances(A, B, numeric_mask, ranges) -> np.ndarray:
    """Pairwise HEOM distances between rows of A (m, d) and B (n, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    acc = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        diff = A[:, j][:, None] - B[:, j][None, :]
        if numeric_mask[j]:
            if ranges[j] > 0:
                acc += (diff / ranges[j]) ** 2
        else:
            acc += diff != 0
    return np.sqrt(acc)


def knn(ds: TabularDataset, row: int, k: int, ranges=None) -> np.ndarray:
    """Positions of the k nearest rows of ``ds`` to row ``row`` (itself excluded).

    Ties are broken by row position. Fewer than k are returned when ``ds``
    has fewer than k + 1 rows.
    """
    ranges = feature_ranges(ds) if ranges is None else ranges
    d = heom_distances(ds.X[row], ds.X, ds.schema.numeric_mask, ranges)[0]
    order = np.argsort(d, kind="stable")
    order = order[order != row]
    return order[:k]


def _knn_table(X, numeric_mask, ranges, k, block=256):
    n = len(X)
    k = min(k, n - 1)
    idx = np.zeros((n, k), dtype=np.int64)
    dist = np.zeros((n, k))
    for s in range(0, n, block):
        d = heom_distances(X[s : s + block], X, numeric_mask, ranges)
        rows = np.arange(s, min(s + block, n))
        d[np.arange(len(rows)), rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[rows] = order
        dist[rows] = np.take_along_axis(d, order, axis=1)
    return idx, dist


# ---------------------------------------------------------------- generators


def smoter_sample(x_seed, y_seed, x_nb, y_nb, numeric_mask, ranges, rng):
    """Interpolate a synthetic row between a seed and a neighbour.

    Numeric features move a Uniform(0, 1) fraction of the way to the
    neighbour; categorical features copy either parent at random. The target
    is the inverse-distance weighted mean of the parents' targets.
    """
    x_seed = np.asarray(x_seed, dtype=float)
    x_nb = np.asarray(x_nb, dtype=float)
    u = rng.random()
    x_new = x_seed + u * (x_nb - x_seed)
    cat = ~np.asarray(numeric_mask, dtype=bool)
    if cat.any():
        pick = rng.random(cat.sum()) < 0.5
        x_new[cat] = np.where(pick, x_nb[cat], x_seed[cat])
    d = heom_distances(x_new, np.vstack([x_seed, x_nb]), numeric_mask, ranges)[0]
    d_seed, d_nb = d
    if d_seed == d_nb:
        y_new = 0.5 * (y_seed + y_nb)
    else:
        y_new = (d_nb * y_seed + d_seed * y_nb) / (d_seed + d_nb)
    return x_new, float(y_new)


def noise_sample(x_seed, y_seed, pert, feature_stddevs, target_stddev, numeric_mask, rng):
    """Gaussian perturbation of a seed row; draws are truncated at 6 stddevs."""
    x_seed = np.asarray(x_seed, dtype=float)
    numeric_mask = np.asarray(numeric_mask, dtype=bool)
    z = np.clip(rng.standard_normal(len(x_seed) + 1), -NOISE_CLIP, NOISE_CLIP)
    x_new = x_seed + np.where(numeric_mask, z[:-1] * pert * np.asarray(feature_stddevs), 0.0)
    y_new = y_seed + z[-1] * pert * target_stddev
    return x_new, float(y_new)


# ---------------------------------------------------------------- bumps


@dataclass
class Bump:
    lo: float
    hi: float
    size: int
    rare: bool
    target: int
    generated: int = 0


@dataclass(eq=False)
class SynthResult:
    data: TabularDataset
    bumps: list[Bump]
    warning: str | None = None
    # per synthetic row: input positions of seed and neighbour (-1 for the noise branch)
    parents: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    branch: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_synthetic(self) -> int:
        return len(self.branch)

    def manifest(self) -> dict:
        return {
            "n_input": len(self.data) - self.n_synthetic,
            "n_synthetic": self.n_synthetic,
            "n_smoter": int((self.branch == SMOTER).sum()),
            "n_noise": int((self.branch == NOISE).sum()),
            "warning": self.warning,
            "bumps": [
                {"lo": b.lo, "hi": b.hi, "size": b.size, "rare": b.rare, "target": b.target, "generated": b.generated}
                for b in self.bumps
            ],
        }


def _bumps(y_sorted, rare_sorted):
    """Maximal runs of equal rarity in target-sorted order, as (start, stop, rare)."""
    runs = []
    start = 0
    for i in range(1, len(y_sorted) + 1):
        if i == len(y_sorted) or rare_sorted[i] != rare_sorted[start]:
            runs.append((start, i, bool(rare_sorted[start])))
            start = i
    return runs


def _target_size(policy, sizes):
    mean = len(sizes) and sum(sizes) / len(sizes)
    if policy == "mean":
        return int(round(mean))
    if policy == "max":
        return int(max(sizes))
    return int(round(float(policy) * mean))


def _oversample(ds: TabularDataset, rare_mask: np.ndarray, cfg: SynthConfig) -> SynthResult:
    rng = np.random.default_rng(cfg.seed)
    order = np.argsort(ds.y, kind="stable")
    runs = _bumps(ds.y[order], rare_mask[order])
    target = _target_size(cfg.oversample_target, [b - a for a, b, _ in runs])
    numeric = ds.schema.numeric_mask
    ranges = feature_ranges(ds)

    new_X, new_y, parents, branch = [], [], [], []
    bumps = []
    for a, b, rare in runs:
        members = order[a:b]
        size = len(members)
        bump = Bump(float(ds.y[members[0]]), float(ds.y[members[-1]]), size, rare, size)
        bumps.append(bump)
        if not rare or size >= target or size < 1:
            continue
        bump.target = target
        n_new = target - size
        if size == 1:
            # a lone seed has no neighbours: every synthetic row comes from the noise branch
            nn_idx = np.zeros((1, 0), dtype=np.int64)
            nn_dist = np.zeros((1, 0))
        else:
            nn_idx, nn_dist = _knn_table(ds.X[members], numeric, ranges, cfg.k_neighbors)
        safe = np.median(nn_dist, axis=1) / 2 if nn_dist.shape[1] else np.zeros(size)
        fstd = np.where(numeric, ds.X[members].std(axis=0), 0.0)
        tstd = float(ds.y[members].std())

        per_seed = np.full(size, n_new // size)
        extra = rng.choice(size, size=n_new % size, replace=False)
        per_seed[extra] += 1
        for i in range(size):
            seed_row = members[i]
            for _ in range(per_seed[i]):
                if nn_idx.shape[1]:
                    j = rng.integers(nn_idx.shape[1])
                    nb_local, nb_dist = nn_idx[i, j], nn_dist[i, j]
                else:
                    nb_local, nb_dist = -1, np.inf
                if nb_local >= 0 and nb_dist < safe[i]:
                    nb_row = members[nb_local]
                    x, y = smoter_sample(ds.X[seed_row], ds.y[seed_row], ds.X[nb_row], ds.y[nb_row], numeric, ranges, rng)
                    parents.append((seed_row, nb_row))
                    branch.append(SMOTER)
                else:
                    x, y = noise_sample(ds.X[seed_row], ds.y[seed_row], cfg.pert, fstd, tstd, numeric, rng)
                    parents.append((seed_row, -1))
                    branch.append(NOISE)
                new_X.append(x)
                new_y.append(y)
        bump.generated = n_new

    if not new_y:
        return SynthResult(ds, bumps)
    out = ds.append(np.array(new_X), np.array(new_y))
    return SynthResult(out, bumps, None, np.array(parents, dtype=np.int64), np.array(branch, dtype=np.int64))


def synthesize_full(d_t: TabularDataset, cfg: SynthConfig | None = None,
                    relevance: Callable | None = None) -> SynthResult:
    """Oversample the rare regions found by the relevance function over the whole target range."""
    cfg = cfg or SynthConfig()
    if len(d_t) == 0:
        raise SynthError("cannot synthesize from an empty dataset")
    relevance = relevance or build_relevance(d_t.y)
    rare = np.asarray(relevance(d_t.y)) >= cfg.relevance_threshold
    if not rare.any():
        msg = "no rows reach the relevance threshold; data returned unchanged"
        log.warning(msg)
        order = np.argsort(d_t.y, kind="stable")
        return SynthResult(d_t, [Bump(float(d_t.y[order[0]]), float(d_t.y[order[-1]]), len(d_t), False, len(d_t))], msg)
    return _oversample(d_t, rare, cfg)


def region_bounds(mu: float, sigma: float, alpha: float) -> tuple[float, float]:
    return mu - alpha * sigma, mu + alpha * sigma


def synthesize_region(d_s: TabularDataset, mu_n: float, sigma_n: float, cfg: SynthConfig | None = None) -> SynthResult:
    """Oversample only targets inside [mu - alpha*sigma, mu + alpha*sigma].

    Rows outside the range pass through untouched.
    """
    cfg = cfg or SynthConfig()
    if not sigma_n > 0:
        raise SynthError("sigma_n must be positive")
    lo, hi = region_bounds(mu_n, sigma_n, cfg.alpha)
    rare = (d_s.y >= lo) & (d_s.y <= hi)
    if not rare.any():
        raise SynthError(f"no rows with target in [{lo:.6g}, {hi:.6g}]")
    return _oversample(d_s, rare, cfg)
