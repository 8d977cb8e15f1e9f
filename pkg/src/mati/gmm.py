"""One-dimensional Gaussian mixtures over regression targets.

EM with deterministic quantile initialisation, AIC model selection and
posterior (MAP) partitioning of a dataset by its targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import TabularDataset

LOG_2PI = math.log(2 * math.pi)


class GmmError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: float
    stddev: float


@dataclass
class GmmConfig:
    max_iter: int = 200
    tol: float = 1e-6
    variance_floor_ratio: float = 1e-6
    n_restarts: int = 0
    seed: int = 0
    # fits with a component below this weight are inadmissible for selection
    min_component_weight: float = 0.01


@dataclass
class GmmModel:
    components: list[GaussianComponent]
    log_likelihood: float
    aic: float
    n_iterations: int
    converged: bool
    ll_history: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def stddevs(self) -> np.ndarray:
        return np.array([c.stddev for c in self.components])

    def to_dict(self) -> dict:
        return {
            "n_components": self.n_components,
            "weights": [float(v) for v in self.weights],
            "means": [float(v) for v in self.means],
            "stddevs": [float(v) for v in self.stddevs],
            "log_likelihood": float(self.log_likelihood),
            "aic": float(self.aic),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        comps = [GaussianComponent(w, m, s) for w, m, s in zip(d["weights"], d["means"], d["stddevs"])]
        return cls(comps, d["log_likelihood"], d["aic"], d["n_iterations"], d["converged"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GmmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def aic_score(log_likelihood: float, n_components: int) -> float:
    """AIC with k = 3N - 1 free parameters (N means, N variances, N-1 free weights)."""
    k = 3 * n_components - 1
    return 2.0 * k - 2.0 * log_likelihood


def _log_weighted_densities(y, w, mu, var):
    # (n_samples, n_components) log of pi_n * N(y | mu_n, var_n)
    d = y[:, None] - mu[None, :]
    return np.log(w)[None, :] - 0.5 * (LOG_2PI + np.log(var)[None, :] + d * d / var[None, :])


def _logsumexp(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _em(y, mu, var, w, cfg: GmmConfig, floor):
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        logp = _log_weighted_densities(y, w, mu, var)
        lse = _logsumexp(logp)
        ll = float(lse.sum())
        if history and ll - history[-1] < cfg.tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / len(y)
        mu = (resp * y[:, None]).sum(axis=0) / nk
        var = (resp * (y[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        var = np.maximum(var, floor)
    else:
        # log-likelihood of the final parameters
        history.append(float(_logsumexp(_log_weighted_densities(y, w, mu, var)).sum()))
    return mu, var, w, history, converged, it


def fit_em(labels, n_components: int, cfg: GmmConfig | None = None) -> GmmModel:
    """Fit an ``n_components`` mixture to 1-D ``labels`` by EM.

    Means start at the (n + 0.5)/N quantiles, every stddev at the overall
    stddev and weights at 1/N. Iteration stops once the log-likelihood
    improves by less than ``cfg.tol`` or after ``cfg.max_iter`` M-steps.
    ``ll_history[i]`` is the log-likelihood after ``i`` M-steps.
    """
    cfg = cfg or GmmConfig()
    y = np.asarray(labels, dtype=float).reshape(-1)
    n = int(n_components)
    if n < 1:
        raise GmmError("n_components must be >= 1")
    if len(y) < n:
        raise GmmError(f"need at least {n} labels, got {len(y)}")
    if len(np.unique(y)) < n:
        raise GmmError(f"n_components={n} exceeds the number of distinct labels ({len(np.unique(y))})")
    total_var = float(y.var())
    floor = cfg.variance_floor_ratio * total_var if total_var > 0 else 1e-12

    inits = [np.quantile(y, (np.arange(n) + 0.5) / n)]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.n_restarts):
        inits.append(np.sort(rng.choice(y, size=n, replace=False)))

    best = None
    for mu0 in inits:
        var0 = np.full(n, max(total_var, floor))
        w0 = np.full(n, 1.0 / n)
        mu, var, w, hist, conv, it = _em(y, mu0.astype(float), var0, w0, cfg, floor)
        if best is None or hist[-1] > best[3][-1]:
            best = (mu, var, w, hist, conv, it)
    mu, var, w, hist, conv, it = best
    order = np.argsort(mu, kind="stable")
    comps = [GaussianComponent(float(w[i]), float(mu[i]), float(math.sqrt(var[i]))) for i in order]
    ll = hist[-1]
    return GmmModel(comps, ll, aic_score(ll, n), it, conv, hist)


def select_by_aic(labels, n_max: int, cfg: GmmConfig | None = None) -> GmmModel:
    """Fit N = 1..n_max and keep the lowest-AIC model (ties go to the smaller N).

    Fits where some component carries less than ``cfg.min_component_weight``
    of the data (a handful of points, or a collapsed spike) are skipped;
    the single-component fit is always admissible.
    """
    cfg = cfg or GmmConfig()
    if n_max < 1:
        raise GmmError("n_max must be >= 1")
    n_distinct = len(np.unique(np.asarray(labels)))
    best = None
    for n in range(1, min(n_max, n_distinct) + 1):
        model = fit_em(labels, n, cfg)
        if n > 1 and model.weights.min() < cfg.min_component_weight:
            continue
        if best is None or model.aic < best.aic:
            best = model
    return best


def posterior_scores(gmm: GmmModel, y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return _log_weighted_densities(y, gmm.weights, gmm.means, gmm.stddevs**2)


def posterior_assign(gmm: GmmModel, y):
    """Index of the component maximising pi_n N(y | mu_n, sigma_n^2).

    Components are stored by ascending mean and argmax returns the first
    maximiser, so ties go to the lower-mean component. Scalar in, int out;
    array in, array out.
    """
    z = np.argmax(posterior_scores(gmm, y), axis=1)
    return int(z[0]) if np.ndim(y) == 0 else z


def partition(ds: TabularDataset, gmm: GmmModel) -> list[TabularDataset]:
    """Split rows by posterior assignment of their targets; subsets may be empty."""
    z = posterior_assign(gmm, ds.y) if len(ds) else np.zeros(0, dtype=int)
    return [ds.take(np.flatnonzero(z == n)) for n in range(gmm.n_components)]
