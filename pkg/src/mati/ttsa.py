"""Test-time self-supervised aggregation of frozen experts.

Softmax weights over the experts are learned on unlabeled test features by
minimising the squared gap between aggregated predictions on two randomly
corrupted views of each batch. Experts that stay stable under corruption
end up with more weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class AggregationError(RuntimeError):
    pass


@dataclass
class TtsaConfig:
    epochs: int = 30
    corrupt_ratio: float = 0.1
    learning_rate: float = 0.05
    batch_size: int = 256
    stop_threshold: float = 0.05
    # draw corruption replacements from the batch or from the whole test set
    marginal: str = "batch"
    # measure the gap relative to its value at uniform weights, so the step size is unit-free
    normalize_gap: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.corrupt_ratio <= 1:
            raise AggregationError("corrupt_ratio must lie in [0, 1]")
        if self.epochs < 1:
            raise AggregationError("epochs must be >= 1")
        if self.batch_size < 2:
            raise AggregationError("batch_size must be >= 2")
        if self.marginal not in ("batch", "full"):
            raise AggregationError(f"unknown marginal {self.marginal!r}")


def softmax(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    e = np.exp(w - w.max())
    return e / e.sum()


@dataclass
class AggregationWeights:
    raw: np.ndarray
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)

    @property
    def normalized(self) -> np.ndarray:
        return softmax(self.raw)

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        return cls(np.zeros(n))

    def to_dict(self) -> dict:
        return {
            "raw": [float(v) for v in self.raw],
            "normalized": [float(v) for v in self.normalized],
            "stopped_early": bool(self.stopped_early),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregationWeights":
        return cls(np.array(d["raw"], dtype=float), d.get("history", []), d.get("stopped_early", False))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "AggregationWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))


def corrupt(X, r: float, rng, source=None) -> np.ndarray:
    """Mask each entry with probability ``r`` and replace it by another row's value.

    Replacement values for column j come from column j of a uniformly chosen
    row other than the entry's own (of ``source`` if given, else of ``X``).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise AggregationError("corruption needs a 2-D batch with at least two rows")
    mask = rng.random(X.shape) < r
    if source is None:
        n = len(X)
        other = (np.arange(n)[:, None] + rng.integers(1, n, size=X.shape)) % n
        repl = np.take_along_axis(X, other, axis=0)
    else:
        source = np.asarray(source, dtype=float)
        repl = np.take_along_axis(source, rng.integers(0, len(source), size=X.shape), axis=0)
    return np.where(mask, repl, X)


def expert_outputs(experts: Sequence, X) -> np.ndarray:
    """(n_experts, n_rows) matrix of expert predictions."""
    return np.vstack([np.asarray(e.predict(X), dtype=float).reshape(-1) for e in experts])


def _raw(w) -> np.ndarray:
    return w.raw if isinstance(w, AggregationWeights) else np.asarray(w, dtype=float)


def predict_aggregated(experts: Sequence, w, X) -> np.ndarray:
    raw = _raw(w)
    if len(experts) != len(raw):
        raise AggregationError(f"{len(experts)} experts but {len(raw)} weights")
    return softmax(raw) @ expert_outputs(experts, X)


def gap_from_outputs(raw, V1, V2) -> float:
    d = softmax(raw) @ (V1 - V2)
    return float(np.mean(d * d))


def gap_gradient_from_outputs(raw, V1, V2) -> np.ndarray:
    p = softmax(raw)
    delta = V1 - V2  # (n_experts, rows)
    d = p @ delta
    centred = delta - d[None, :]
    return (2.0 / delta.shape[1]) * p * (centred @ d)


def prediction_gap(experts, w, view1, view2) -> float:
    raw = _raw(w)
    return gap_from_outputs(raw, expert_outputs(experts, view1), expert_outputs(experts, view2))


def gap_gradient(experts, w, view1, view2) -> np.ndarray:
    """Analytic dS/dw through the softmax; experts are frozen."""
    raw = _raw(w)
    return gap_gradient_from_outputs(raw, expert_outputs(experts, view1), expert_outputs(experts, view2))


def aggregate(experts: Sequence, test_X, cfg: TtsaConfig | None = None) -> AggregationWeights:
    """Learn aggregation weights on unlabeled ``test_X``.

    Starts from uniform weights. Each epoch shuffles the rows into batches;
    every batch gets two fresh corrupted views and one gradient step on the
    raw weights. After each epoch the run stops if any normalised weight has
    fallen to ``stop_threshold`` or below.
    """
    cfg = cfg or TtsaConfig()
    X = np.asarray(test_X, dtype=float)
    n = len(experts)
    if n < 1:
        raise AggregationError("need at least one expert")
    if len(X) < 2:
        raise AggregationError("need at least two test rows")
    if not 0 <= cfg.stop_threshold < 1.0 / n:
        raise AggregationError(f"stop_threshold must lie in [0, 1/{n})")
    w = AggregationWeights.uniform(n)
    if n == 1:
        return w
    rng = np.random.default_rng(cfg.seed)
    source = X if cfg.marginal == "full" else None
    raw = w.raw.copy()
    scale = 1.0
    if cfg.normalize_gap:
        s0 = gap_from_outputs(
            raw,
            expert_outputs(experts, corrupt(X, cfg.corrupt_ratio, rng, source)),
            expert_outputs(experts, corrupt(X, cfg.corrupt_ratio, rng, source)),
        )
        scale = s0 if s0 > 0 else 1.0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        starts = list(range(0, len(X), cfg.batch_size))
        if len(starts) > 1 and len(X) - starts[-1] < 2:
            starts.pop()  # fold a one-row tail into the previous batch
        gaps = []
        for i, s in enumerate(starts):
            stop = starts[i + 1] if i + 1 < len(starts) else len(X)
            batch = X[order[s:stop]]
            v1 = corrupt(batch, cfg.corrupt_ratio, rng, source)
            v2 = corrupt(batch, cfg.corrupt_ratio, rng, source)
            V1, V2 = expert_outputs(experts, v1), expert_outputs(experts, v2)
            S = gap_from_outputs(raw, V1, V2)
            if not math.isfinite(S):
                raise AggregationError(f"non-finite prediction gap at epoch {epoch}")
            gaps.append(S)
            raw = raw - cfg.learning_rate * gap_gradient_from_outputs(raw, V1, V2) / scale
        p = softmax(raw)
        w.history.append({"epoch": epoch, "gap": float(np.mean(gaps)), "weights": [float(v) for v in p]})
        if np.any(p <= cfg.stop_threshold):
            w.stopped_early = True
            break
    w.raw = raw
    return w
