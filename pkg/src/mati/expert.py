"""Region experts: small ReLU regressors trained with MSE and early stopping."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, STD_FLOOR, Scaler, TabularDataset, fit_scaler


class ExpertError(RuntimeError):
    pass


@dataclass
class MlpConfig:
    hidden_layers: list[int] = field(default_factory=lambda: [64, 64])
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        self.hidden_layers = [int(h) for h in self.hidden_layers]
        if self.max_epochs < 1:
            raise ExpertError("max_epochs must be >= 1")
        if not 0 < self.validation_fraction < 0.5:
            raise ExpertError("validation_fraction must lie in (0, 0.5)")
        if self.optimizer not in ("adam", "sgd"):
            raise ExpertError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class InputLayout:
    """Maps raw feature rows (categorical codes) to the network input vector."""

    scaler: Scaler
    n_codes: list[int]  # 0 for numeric columns

    @classmethod
    def fit(cls, ds: TabularDataset) -> "InputLayout":
        n_codes = [len(ds.code_tables[n]) if k == CATEGORICAL else 0 for n, k in ds.schema.columns]
        return cls(fit_scaler(ds), n_codes)

    @property
    def n_raw(self) -> int:
        return len(self.n_codes)

    @property
    def width(self) -> int:
        return sum(c if c else 1 for c in self.n_codes)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_raw:
            raise ExpertError(f"expected a feature matrix with {self.n_raw} columns, got shape {X.shape}")
        Xs = (X - self.scaler.mean) / self.scaler.std
        cols = []
        for j, c in enumerate(self.n_codes):
            if c == 0:
                cols.append(Xs[:, j : j + 1])
            else:
                cols.append(np.eye(c)[np.clip(X[:, j].astype(np.int64), 0, c - 1)])
        return np.hstack(cols) if cols else np.zeros((len(X), 0))

    def to_dict(self) -> dict:
        return {"scaler": self.scaler.to_dict(), "n_codes": list(self.n_codes)}

    @classmethod
    def from_dict(cls, d: dict) -> "InputLayout":
        return cls(Scaler.from_dict(d["scaler"]), list(d["n_codes"]))


# ---------------------------------------------------------------- network


def init_params(sizes, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-initialised weights for layer sizes [in, h1, ..., 1]."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / max(fan_in, 1))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params, Z):
    acts = [Z]
    pre = []
    h = Z
    for i, (W, b) in enumerate(params):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(params) - 1 else z
        acts.append(h)
    return h[:, 0], acts, pre


def loss_and_grads(params, Z, y):
    """Mean squared error and its gradients w.r.t. every (W, b)."""
    out, acts, pre = forward(params, Z)
    r = out - y
    loss = float(np.mean(r * r))
    delta = (2.0 / len(y)) * r[:, None]
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ W.T) * (pre[i - 1] > 0)
    return loss, grads


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        out = []
        for i, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
            mW, mb = self.m[i]
            vW, vb = self.v[i]
            mW = self.b1 * mW + (1 - self.b1) * gW
            mb = self.b1 * mb + (1 - self.b1) * gb
            vW = self.b2 * vW + (1 - self.b2) * gW * gW
            vb = self.b2 * vb + (1 - self.b2) * gb * gb
            self.m[i], self.v[i] = (mW, mb), (vW, vb)
            W = W - self.lr * (mW / c1) / (np.sqrt(vW / c2) + self.eps)
            b = b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps)
            out.append((W, b))
        return out


class _Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        return [(W - self.lr * gW, b - self.lr * gb) for (W, b), (gW, gb) in zip(params, grads)]


# ---------------------------------------------------------------- model


@dataclass(eq=False)
class ExpertModel:
    params: list[tuple[np.ndarray, np.ndarray]]
    layout: InputLayout
    target_mean: float = 0.0
    target_std: float = 1.0
    region_mean: float = float("nan")
    region_stddev: float = float("nan")
    history: dict = field(default_factory=lambda: {"train": [], "val": []})
    best_epoch: int = 0
    config: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    @classmethod
    def random(cls, layout: InputLayout, hidden_layers, seed: int = 0) -> "ExpertModel":
        sizes = [layout.width, *hidden_layers, 1]
        return cls(init_params(sizes, np.random.default_rng(seed)), layout)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "layout": self.layout.to_dict(),
            "layer_shapes": [list(W.shape) for W, _ in self.params],
            "params": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
            "region_mean": float(self.region_mean),
            "region_stddev": float(self.region_stddev),
            "history": {k: [float(v) for v in vals] for k, vals in self.history.items()},
            "best_epoch": int(self.best_epoch),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertModel":
        params = [(np.array(p["W"], dtype=float).reshape(s), np.array(p["b"], dtype=float))
                  for p, s in zip(d["params"], d["layer_shapes"])]
        return cls(
            params,
            InputLayout.from_dict(d["layout"]),
            d["target_mean"],
            d["target_std"],
            d["region_mean"],
            d["region_stddev"],
            d["history"],
            d["best_epoch"],
            d.get("config", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExpertModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: ExpertModel, X) -> np.ndarray:
    if isinstance(X, TabularDataset):
        X = X.X
    Z = model.layout.transform(X)
    if Z.shape[1] != model.params[0][0].shape[0]:
        raise ExpertError(f"input width {Z.shape[1]} does not match first layer {model.params[0][0].shape[0]}")
    out, _, _ = forward(model.params, Z)
    return out * model.target_std + model.target_mean


def train_expert(ds: TabularDataset, cfg: MlpConfig | None = None,
                 region_mean: float = float("nan"), region_stddev: float = float("nan")) -> ExpertModel:
    """Train one regressor on ``ds`` and return the best-validation-epoch parameters.

    A ``validation_fraction`` share of rows is held out for early stopping;
    training stops after ``patience`` consecutive epochs without a new best
    validation loss (immediately at the first non-improvement when
    ``patience`` is 0). Features are standardised with statistics of the
    training rows; targets are standardised internally and predictions are
    returned in target units. Losses in ``history`` are in target units.
    """
    cfg = cfg or MlpConfig()
    if len(ds) == 0:
        raise ExpertError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(ds))
    n_val = int(round(cfg.validation_fraction * len(ds)))
    n_val = min(max(n_val, 1), len(ds) - 1) if len(ds) > 1 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    train = ds.take(tr_idx)
    layout = InputLayout.fit(train)
    Z = layout.transform(train.X)
    y_mean = float(train.y.mean())
    y_std = max(float(train.y.std()), STD_FLOOR)
    t = (train.y - y_mean) / y_std
    if n_val:
        Zv = layout.transform(ds.X[val_idx])
        tv = (ds.y[val_idx] - y_mean) / y_std
    else:
        Zv, tv = Z, t

    params = init_params([layout.width, *cfg.hidden_layers, 1], rng)
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(params, cfg.learning_rate)
    scale = y_std * y_std
    history = {"train": [], "val": []}
    best = (math.inf, params, 0)
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(t))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s : s + cfg.batch_size]
            loss, grads = loss_and_grads(params, Z[b], t[b])
            if not math.isfinite(loss):
                raise ExpertError(f"training diverged at epoch {epoch} (non-finite loss)")
            params = opt.step(params, grads)
            total += loss * len(b)
        val = float(np.mean((forward(params, Zv)[0] - tv) ** 2))
        if not math.isfinite(val):
            raise ExpertError(f"training diverged at epoch {epoch} (non-finite validation loss)")
        history["train"].append(total / len(t) * scale)
        history["val"].append(val * scale)
        if val < best[0]:
            best = (val, params, epoch)
            wait = 0
        else:
            wait += 1
            if wait >= max(cfg.patience, 1):
                break
    return ExpertModel(
        best[1], layout, y_mean, y_std, float(region_mean), float(region_stddev), history, best[2], asdict(cfg)
    )


def grad_check(model: ExpertModel, sample, eps: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    ``sample`` is (z, y) with ``z`` a network-input vector. The loss is the
    squared error of the raw network output.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ExpertError("eps must lie in [1e-7, 1e-3]")
    z, y = sample
    Z = np.asarray(z, dtype=float).reshape(1, -1)
    yv = np.array([float(y)])
    _, grads = loss_and_grads(model.params, Z, yv)
    worst = 0.0
    for i, (W, b) in enumerate(model.params):
        for which, arr, g in (("W", W, grads[i][0]), ("b", b, grads[i][1])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                vals = []
                for sgn in (1.0, -1.0):
                    p = arr.copy()
                    p[idx] += sgn * eps
                    trial = list(model.params)
                    trial[i] = (p, b) if which == "W" else (W, p)
                    vals.append(float((forward(trial, Z)[0][0] - yv[0]) ** 2))
                num = (vals[0] - vals[1]) / (2 * eps)
                ana = g[idx]
                denom = max(abs(num) + abs(ana), 1e-8)
                worst = max(worst, abs(num - ana) / denom)
    return worst
