import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mati.ttsa import (
    AggregationError,
    AggregationWeights,
    TtsaConfig,
    aggregate,
    corrupt,
    gap_from_outputs,
    gap_gradient,
    gap_gradient_from_outputs,
    predict_aggregated,
    prediction_gap,
    softmax,
)


class Fn:
    """Minimal frozen expert wrapping a function of the feature matrix."""

    def __init__(self, f):
        self.f = f

    def predict(self, X):
        return self.f(np.asarray(X, dtype=float))


def linear(c):
    c = np.asarray(c, dtype=float)
    return Fn(lambda X: X @ c)


def constant(v):
    return Fn(lambda X: np.full(len(X), float(v)))


# ---------------------------------------------------------------- corruption


def test_zero_ratio_is_identity():
    X = np.random.default_rng(0).normal(size=(20, 4))
    np.testing.assert_array_equal(corrupt(X, 0.0, np.random.default_rng(1)), X)


def test_full_ratio_values_come_from_their_column():
    X = np.random.default_rng(0).normal(size=(30, 5))
    C = corrupt(X, 1.0, np.random.default_rng(2))
    for j in range(5):
        assert set(C[:, j]) <= set(X[:, j])


def test_changed_fraction_matches_collision_oracle():
    # [DERIVED] a masked entry changes unless the donor row holds the same value
    rng = np.random.default_rng(3)
    X = np.c_[rng.integers(0, 3, 200), rng.normal(size=200)].astype(float)
    r = 0.3
    changed = np.zeros(2)
    reps = 200
    for _ in range(reps):
        changed += (corrupt(X, r, rng) != X).mean(axis=0)
    changed /= reps
    n = len(X)
    counts = np.bincount(X[:, 0].astype(int))
    p_same = ((counts * (counts - 1)).sum() / (n * (n - 1)))
    assert changed[0] == pytest.approx(r * (1 - p_same), rel=0.02)
    assert changed[1] == pytest.approx(r, rel=0.02)


def test_corruption_with_external_source():
    X = np.zeros((5, 2))
    src = np.full((10, 2), 7.0)
    C = corrupt(X, 1.0, np.random.default_rng(0), source=src)
    assert np.all(C == 7.0)


def test_corruption_rejects_single_row():
    with pytest.raises(AggregationError):
        corrupt(np.zeros((1, 3)), 0.5, np.random.default_rng(0))


# ---------------------------------------------------------------- aggregation output


def test_uniform_weights_average():
    X = np.random.default_rng(0).normal(size=(10, 2))
    experts = [linear([1, 0]), linear([0, 1]), constant(3)]
    np.testing.assert_allclose(predict_aggregated(experts, np.zeros(3), X), (X[:, 0] + X[:, 1] + 3) / 3)


def test_saturated_softmax_selects_first_expert():
    X = np.random.default_rng(0).normal(size=(10, 2))
    experts = [linear([1, 2]), linear([5, 0]), constant(-4)]
    np.testing.assert_allclose(predict_aggregated(experts, [40.0, -40.0, -40.0], X), X @ [1, 2], atol=1e-12)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=2))
def test_identical_experts_any_weights(w):
    X = np.arange(12.0).reshape(6, 2)
    e = linear([0.5, -1])
    np.testing.assert_allclose(predict_aggregated([e, e], w, X), e.predict(X), rtol=1e-12, atol=1e-12)


def test_weight_count_mismatch():
    with pytest.raises(AggregationError):
        predict_aggregated([constant(1)], [0.0, 0.0], np.zeros((2, 1)))


# ---------------------------------------------------------------- gap


def test_gap_examples():
    experts = [linear([1.0]), linear([3.0])]
    v = np.array([[1.0], [2.0]])
    assert prediction_gap(experts, [0.3, -1.0], v, v) == 0.0
    np.testing.assert_array_equal(gap_gradient(experts, [0.3, -1.0], v, v), [0.0, 0.0])
    # [DERIVED] two rows by hand: uniform weights give 2*x, so S = ((2-6)^2 + (4-0)^2) / 2 = 16
    v1 = np.array([[1.0], [2.0]])
    v2 = np.array([[3.0], [0.0]])
    assert prediction_gap(experts, [0.0, 0.0], v1, v2) == pytest.approx(16.0)


def test_single_expert_gap_independent_of_weight():
    e = [linear([2.0, 1.0])]
    rng = np.random.default_rng(0)
    v1, v2 = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    vals = {prediction_gap(e, [w], v1, v2) for w in (-3.0, 0.0, 12.0)}
    assert len(vals) == 1


def numeric_gradient(raw, V1, V2, eps=1e-5):
    g = np.zeros_like(raw)
    for i in range(len(raw)):
        up, dn = raw.copy(), raw.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (gap_from_outputs(up, V1, V2) - gap_from_outputs(dn, V1, V2)) / (2 * eps)
    return g


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 6)), int(rng.integers(2, 30))
    raw = rng.normal(size=n)
    V1, V2 = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    ana = gap_gradient_from_outputs(raw, V1, V2)
    num = numeric_gradient(raw, V1, V2)
    assert np.max(np.abs(ana - num)) <= 1e-6 * max(1.0, np.max(np.abs(num)))
    # softmax is shift invariant so the gradient has zero sum
    assert abs(ana.sum()) < 1e-10 * max(1.0, np.abs(ana).max())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_gradient_is_a_descent_direction(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 16
    raw = rng.normal(size=n)
    V1, V2 = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    g = gap_gradient_from_outputs(raw, V1, V2)
    if np.linalg.norm(g) < 1e-12:
        return
    assert -g @ g < 0
    assert gap_from_outputs(raw - 1e-4 * g, V1, V2) < gap_from_outputs(raw, V1, V2)


# ---------------------------------------------------------------- aggregate


def test_single_expert_returns_unit_weight():
    w = aggregate([linear([1.0, 1.0])], np.random.default_rng(0).normal(size=(20, 2)))
    np.testing.assert_array_equal(w.normalized, [1.0])


def test_zero_ratio_leaves_weights_uniform():
    X = np.random.default_rng(0).normal(size=(50, 2))
    w = aggregate([linear([1, 0]), linear([0, 4])], X, TtsaConfig(corrupt_ratio=0.0, normalize_gap=False))
    np.testing.assert_array_equal(w.raw, [0.0, 0.0])
    assert all(h["gap"] == 0.0 for h in w.history)


@pytest.mark.parametrize("seed", range(5))
def test_stable_expert_weight_increases(seed):
    X = np.random.default_rng(seed).normal(size=(300, 3))
    cfg = TtsaConfig(epochs=10, stop_threshold=0.0, seed=seed)
    w = aggregate([constant(1.0), linear([3.0, -2.0, 1.0])], X, cfg)
    series = [h["weights"][0] for h in w.history]
    assert len(series) == 10
    assert all(b > a for a, b in zip([0.5] + series, series))


def test_stop_threshold_ends_run_early():
    X = np.random.default_rng(0).normal(size=(400, 2))
    w = aggregate([constant(0.0), linear([5.0, 5.0])], X,
                  TtsaConfig(epochs=200, learning_rate=5.0, stop_threshold=0.05))
    assert w.stopped_early
    assert w.history[-1]["weights"][1] <= 0.05
    assert all(min(h["weights"]) > 0.05 for h in w.history[:-1])


def test_aggregate_is_deterministic_and_serializes(tmp_path):
    X = np.random.default_rng(1).normal(size=(120, 2))
    experts = [linear([1, 0]), linear([0.2, 0.1]), constant(2)]
    a = aggregate(experts, X, TtsaConfig(seed=4))
    b = aggregate(experts, X, TtsaConfig(seed=4))
    np.testing.assert_array_equal(a.raw, b.raw)
    a.save(tmp_path / "w.json")
    back = AggregationWeights.load(tmp_path / "w.json")
    np.testing.assert_array_equal(back.raw, a.raw)
    assert back.normalized.sum() == pytest.approx(1.0)


def test_weights_stay_a_probability_vector():
    X = np.random.default_rng(2).normal(size=(200, 2))
    w = aggregate([linear([1, 0]), linear([0, 1]), linear([2, 2])], X, TtsaConfig(learning_rate=1.0, stop_threshold=0.0))
    for h in w.history:
        p = np.array(h["weights"])
        assert np.all(p > 0) and p.sum() == pytest.approx(1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_aggregate_errors():
    with pytest.raises(AggregationError):
        aggregate([], np.zeros((3, 1)))
    with pytest.raises(AggregationError):
        aggregate([constant(1), constant(2)], np.zeros((1, 1)))
    with pytest.raises(AggregationError):
        aggregate([constant(1), constant(2)], np.zeros((4, 1)), TtsaConfig(stop_threshold=0.5))
    with pytest.raises(AggregationError):
        aggregate([constant(1), Fn(lambda X: np.full(len(X), np.inf) * X[:, 0])], np.ones((4, 1)),
                  TtsaConfig(corrupt_ratio=1.0, normalize_gap=False))
    with pytest.raises(AggregationError):
        TtsaConfig(corrupt_ratio=1.5)


def test_softmax_matches_direct_formula():
    for raw in itertools.product([-2.0, 0.0, 3.5], repeat=3):
        e = np.exp(np.array(raw))
        np.testing.assert_allclose(softmax(raw), e / e.sum(), rtol=1e-12)
