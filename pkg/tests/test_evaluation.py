import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mati.data import DISTRIBUTIONS, BinningScheme, FeatureSchema, TabularDataset, make_splits
from mati.evaluation import (
    EvalError,
    EvalReport,
    ShotThresholds,
    evaluate,
    gap_center_identity,
    mae,
    mape,
    perturbation_sweep,
    region_expert_table,
    region_test_sets,
    rmse,
    sweep_csv,
)
from mati.gmm import GaussianComponent, GmmModel
from mati.ttsa import TtsaConfig


class Fn:
    def __init__(self, f):
        self.f = f

    def predict(self, X):
        return self.f(np.asarray(X, dtype=float))


def skewed_bundle(seed=0, n=4000):
    rng = np.random.default_rng(seed)
    y = rng.exponential(3.0, n)
    X = np.c_[y + rng.normal(0, 0.3, n), rng.normal(size=n)]
    schema = FeatureSchema((("a", "numeric"), ("b", "numeric")), "y")
    ds = TabularDataset(schema, X, y)
    scheme = BinningScheme.covering(y, 1.0)
    return make_splits(ds, scheme, 0.2, seed), scheme


# ---------------------------------------------------------------- metrics


def test_metric_examples():
    assert mae([1, 2], [1, 4]) == 1.0
    assert rmse([1, 2], [1, 4]) == pytest.approx(math.sqrt(2))
    assert mape([110], [100]) == (pytest.approx(10.0), 0)
    assert (mae([3, 4], [3, 4]), rmse([3, 4], [3, 4]), mape([3, 4], [3, 4])[0]) == (0.0, 0.0, 0.0)


def test_metric_errors_and_zero_targets():
    with pytest.raises(EvalError):
        mae([], [])
    with pytest.raises(EvalError):
        rmse([1, 2], [1])
    val, skipped = mape([1.0, 5.0], [0.0, 4.0])
    assert skipped == 1 and val == pytest.approx(25.0)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=50))
def test_mae_bounded_by_rmse(pairs):
    p, t = np.array(pairs).T
    assert mae(p, t) <= rmse(p, t) + 1e-9


# ---------------------------------------------------------------- evaluate


def test_oracle_predictor_scores_zero():
    bundle, scheme = skewed_bundle()
    lookup = {}
    for d in DISTRIBUTIONS:
        t = bundle.test(d)
        lookup.update({tuple(x): y for x, y in zip(t.X, t.y)})
    report = evaluate(lambda X: np.array([lookup[tuple(x)] for x in X]), bundle, scheme)
    for d in DISTRIBUTIONS:
        assert report.overall[d].mae == 0.0 and report.overall[d].rmse == 0.0


def test_constant_predictor_worse_on_inverse_set():
    bundle, scheme = skewed_bundle(1)
    mean = bundle.train.y.mean()
    report = evaluate(lambda X: np.full(len(X), mean), bundle, scheme)
    assert report.overall["inverse"].mae > report.overall["normal"].mae


def test_report_breakdowns_are_consistent(tmp_path):
    bundle, scheme = skewed_bundle(2)
    report = evaluate(lambda X: X[:, 0], bundle, scheme, ShotThresholds(many=200, few=20))
    for d in DISTRIBUTIONS:
        n = report.overall[d].n
        assert sum(m.n for m in report.per_bin[d].values()) == n
        assert sum(m.n for m in report.shots[d].values()) == n
        # overall MAE is the count-weighted mean of per-bin MAEs
        weighted = sum(m.mae * m.n for m in report.per_bin[d].values()) / n
        assert report.overall[d].mae == pytest.approx(weighted, rel=1e-12)
    report.save(tmp_path / "r")
    data = json.loads((tmp_path / "r.json").read_text())
    assert set(data["overall"]) == set(DISTRIBUTIONS)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert float(rows[0]["mae"]) == report.overall[rows[0]["distribution"]].mae
    assert report.mean_over_distributions() == pytest.approx(np.mean([report.overall[d].mae for d in DISTRIBUTIONS]))


def test_per_distribution_predictors():
    bundle, scheme = skewed_bundle(3)
    fns = {d: (lambda X, k=k: np.full(len(X), float(k))) for k, d in enumerate(DISTRIBUTIONS)}
    report = evaluate(fns, bundle, scheme)
    for k, d in enumerate(DISTRIBUTIONS):
        assert report.overall[d].mae == pytest.approx(mae(np.full(len(bundle.test(d)), k), bundle.test(d).y))


def test_shot_labels():
    s = ShotThresholds(many=100, few=20)
    assert (s.label(101), s.label(100), s.label(20), s.label(19)) == ("many", "medium", "medium", "few")


# ---------------------------------------------------------------- regions


def three_cluster_pool(seed=0):
    rng = np.random.default_rng(seed)
    y = np.concatenate([rng.normal(m, 1.0, 300) for m in (0, 20, 40)])
    schema = FeatureSchema((("a", "numeric"),), "y")
    return TabularDataset(schema, y[:, None], y)


def gmm3():
    comps = [GaussianComponent(1 / 3, m, 1.0) for m in (0.0, 20.0, 40.0)]
    return GmmModel(comps, 0.0, 0.0, 0, True)


def test_region_sets_disjoint_and_in_range():
    pool = three_cluster_pool()
    sets, empty = region_test_sets(pool, gmm3(), 100, seed=0)
    assert not any(empty)
    ids = [set(s.row_ids.tolist()) for s in sets]
    assert all(len(i) == 100 for i in ids)
    assert not (ids[0] & ids[1]) and not (ids[1] & ids[2])
    for s, m in zip(sets, (0, 20, 40)):
        assert np.all(np.abs(s.y - m) <= 1.0)


def test_region_sets_single_component_and_empty_flag():
    pool = three_cluster_pool()
    wide = GmmModel([GaussianComponent(1.0, 20.0, 100.0)], 0.0, 0.0, 0, True)
    sets, _ = region_test_sets(pool, wide, 50)
    assert len(sets) == 1 and len(sets[0]) == 50
    far = GmmModel([GaussianComponent(1.0, 1e4, 1.0)], 0.0, 0.0, 0, True)
    sets, empty = region_test_sets(pool, far, 50)
    assert empty == [True] and len(sets[0]) == 0


def test_region_expert_table_oracle():
    pool = three_cluster_pool(1)
    sets, _ = region_test_sets(pool, gmm3(), 50)
    experts = [Fn(lambda X, m=m: np.full(len(X), float(m))) for m in (0, 20, 40)]
    T = region_expert_table(experts, sets)
    for i in range(3):
        for j in range(3):
            assert T[i, j] == pytest.approx(np.mean(np.abs(sets[j].y - 20 * i)))
    assert all(np.argmin(T[:, j]) == j for j in range(3))


# ---------------------------------------------------------------- sweep


def test_sweep_single_ratio_and_csv():
    bundle, _ = skewed_bundle(4, 1500)
    experts = [Fn(lambda X: X[:, 0]), Fn(lambda X: X[:, 0] + X[:, 1])]
    rows = perturbation_sweep(experts, bundle, [0.2], TtsaConfig(epochs=3))
    assert len(rows) == 1 and rows[0][0] == 0.2
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "ratio,mae,rmse,mape,n"
    assert len(text.splitlines()) == 2
    again = perturbation_sweep(experts, bundle, [0.2], TtsaConfig(epochs=3))
    assert again[0][1].mae == rows[0][1].mae
    with pytest.raises(EvalError):
        perturbation_sweep(experts, bundle, [1.5], TtsaConfig())


# ---------------------------------------------------------------- pairwise / centre identity


def test_gap_identity_example():
    assert gap_center_identity([1, 2, 3]) == (12.0, 12.0)
    assert gap_center_identity([4.0, 4.0, 4.0]) == (0.0, 0.0)
    with pytest.raises(EvalError):
        gap_center_identity([1.0])


@settings(max_examples=100)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_gap_identity_against_brute_force(values):
    pairwise, scaled = gap_center_identity(values)
    brute = sum((a - b) ** 2 for a in values for b in values)
    assert pairwise == pytest.approx(brute, rel=1e-9, abs=1e-6)
    assert scaled == pytest.approx(brute, rel=1e-9, abs=1e-6)


def test_report_roundtrip_fields():
    r = EvalReport()
    assert r.to_dict() == {"metadata": {}, "overall": {}, "per_bin": {}, "shots": {}}
