import json
from dataclasses import replace

import numpy as np
import pytest
import yaml

from mati.data import DISTRIBUTIONS, load_splits
from mati.evaluation import evaluate
from mati.expert import ExpertModel, train_expert
from mati.pipeline import (
    ConfigError,
    Run,
    RunConfig,
    StageError,
    apply_overrides,
    derive_seed,
    load_config,
    region_sigmas,
    run_all,
    run_baseline_smogn,
    run_baseline_vanilla,
    run_mati,
    stage_aggregate,
    stage_gmm,
    stage_split,
)
from mati.gmm import GaussianComponent, GmmModel

# ---------------------------------------------------------------- config


def test_defaults_roundtrip_through_dict():
    cfg = RunConfig()
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert cfg.ttsa.corrupt_ratio == 0.1 and cfg.ttsa.epochs == 30
    assert cfg.expert.max_epochs == 200 and cfg.expert.patience == 20


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="ttsa.epoch"):
        RunConfig.from_dict({"ttsa": {"epoch": 3}})
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"colour": "red"})


def test_invalid_values_raise_config_error():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"ttsa": {"corrupt_ratio": 2.0}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seeds": []})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"baselines": ["ridge"]})


def test_overrides_parse_yaml_values():
    d = apply_overrides({"ttsa": {"epochs": 30}}, ["ttsa.epochs=40", "expert.hidden_layers=[8, 4]", "seeds=[1,2]"])
    assert d == {"ttsa": {"epochs": 40}, "expert": {"hidden_layers": [8, 4]}, "seeds": [1, 2]}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_precedence_file_then_override_then_seed(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"dataset": "d.csv", "schema": "s.json", "ttsa": {"epochs": 10}, "seeds": [4, 5]}))
    cfg = load_config(p, ["ttsa.epochs=12"], seed=9)
    assert cfg.ttsa.epochs == 12 and cfg.seeds == [9]
    assert cfg.dataset == str((tmp_path / "d.csv").resolve())
    assert cfg.ttsa.corrupt_ratio == 0.1
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(s, k) for s in range(5) for k in range(5)}) == 25


def test_region_sigma_sources():
    from mati.data import FeatureSchema, TabularDataset

    y = np.r_[np.zeros(5) + np.arange(5) * 0.1, 10 + np.arange(5) * 0.3]
    ds = TabularDataset(FeatureSchema((("a", "numeric"),), "y"), y[:, None], y)
    g = GmmModel([GaussianComponent(0.5, 0.2, 1.0), GaussianComponent(0.5, 10.6, 2.0)], 0, 0, 0, True)
    assert region_sigmas(ds, g, "gmm") == [1.0, 2.0]
    np.testing.assert_allclose(region_sigmas(ds, g, "partition"), [y[:5].std(), y[5:].std()])


# ---------------------------------------------------------------- stages


def test_full_run_writes_expected_artifacts(small_cfg, tmp_path):
    res = run_mati(small_cfg, tmp_path / "out")
    n = res.gmm.n_components
    seed_dir = tmp_path / "out" / "seed_0"
    assert len(res.experts) == n
    assert sorted(p.name for p in (seed_dir / "experts").glob("expert_*.json")) == [f"expert_{i}.json" for i in range(n)]
    assert set(res.weights) == set(DISTRIBUTIONS)
    for w in res.weights.values():
        assert len(w.normalized) == n and w.normalized.sum() == pytest.approx(1.0)
    assert set(res.reports) == {"mati", "vanilla", "smogn"}
    for stage in ("split", "gmm", "synth", "experts", "weights", "reports", "baselines"):
        m = json.loads((seed_dir / stage / "stage.json").read_text())
        assert m["status"] == "done"
    assert (tmp_path / "out" / "config.yaml").exists()


def test_three_cluster_data_gives_three_experts(small_cfg, tmp_path):
    cfg = replace(small_cfg, n_components=3)
    res = run_mati(cfg, tmp_path / "out")
    assert len(res.experts) == 3
    assert [len(w.normalized) for w in res.weights.values()] == [3, 3, 3]


def test_single_component_collapse(small_cfg, tmp_path):
    cfg = replace(small_cfg, n_max=1)
    res = run_mati(cfg, tmp_path / "out")
    assert len(res.experts) == 1
    for w in res.weights.values():
        np.testing.assert_array_equal(w.normalized, [1.0])


def test_rerun_hits_cache_and_is_identical(small_cfg, tmp_path):
    lines = []
    run_mati(small_cfg, tmp_path / "a", log=lines.append)
    assert all("status=done" in ln for ln in lines)
    lines.clear()
    run_mati(small_cfg, tmp_path / "a", log=lines.append)
    assert lines and all("status=cache-hit" in ln for ln in lines)
    run_mati(small_cfg, tmp_path / "b")
    for rel in ("seed_0/reports/mati.json", "seed_0/experts/expert_0.json", "seed_0/weights/inverse.json",
                "seed_0/split/test_inverse.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_changed_config_invalidates_downstream(small_cfg, tmp_path):
    run_mati(small_cfg, tmp_path / "a")
    lines = []
    run_mati(replace(small_cfg, ttsa=replace(small_cfg.ttsa, epochs=4)), tmp_path / "a", log=lines.append)
    status = {ln.split()[0]: ln.split()[2] for ln in lines}
    assert status["stage=experts"] == "status=cache-hit"
    assert status["stage=weights"] == "status=done"
    assert status["stage=reports"] == "status=done"


def test_tampered_output_is_rebuilt(small_cfg, tmp_path):
    run_mati(small_cfg, tmp_path / "a")
    target = tmp_path / "a" / "seed_0" / "gmm" / "gmm.json"
    original = target.read_bytes()
    target.write_text("{}")
    lines = []
    run_mati(small_cfg, tmp_path / "a", log=lines.append)
    assert any(ln.startswith("stage=gmm") and "status=done" in ln for ln in lines)
    assert target.read_bytes() == original


def test_missing_experts_raise_stage_error(small_cfg, tmp_path):
    run = Run(small_cfg, tmp_path / "a")
    stage_split(run, 0)
    stage_gmm(run, 0)
    with pytest.raises(StageError) as err:
        stage_aggregate(run, 0)
    assert err.value.stage == "aggregate"
    assert "train-experts" in str(err.value)


def test_failed_stage_is_named(small_cfg, tmp_path):
    cfg = replace(small_cfg, dataset=str(tmp_path / "nope.csv"))
    with pytest.raises(Exception):
        stage_split(Run(cfg, tmp_path / "a"), 0)


def test_vanilla_equals_manual_training(small_cfg, tmp_path):
    report = run_baseline_vanilla(small_cfg, tmp_path / "a")
    run = Run(small_cfg, tmp_path / "a")
    bundle, scheme = load_splits(run.dir(0, "split"))
    from mati.pipeline import _expert_cfg

    manual = train_expert(bundle.train, _expert_cfg(run, 0, "vanilla"))
    saved = ExpertModel.load(run.dir(0, "baselines") / "vanilla.json")
    for (Wa, ba), (Wb, bb) in zip(manual.params, saved.params):
        np.testing.assert_array_equal(Wa, Wb)
        np.testing.assert_array_equal(ba, bb)
    again = evaluate(manual.predict, bundle, scheme, small_cfg.shots)
    for d in DISTRIBUTIONS:
        assert again.overall[d].mae == report.overall[d].mae


def test_smogn_baseline_runs(small_cfg, tmp_path):
    report = run_baseline_smogn(small_cfg, tmp_path / "a")
    assert set(report.overall) == set(DISTRIBUTIONS)


def test_run_all_summary(small_cfg, tmp_path):
    cfg = replace(small_cfg, seeds=[0, 1])
    results, summary = run_all(cfg, tmp_path / "a")
    assert set(results) == {0, 1}
    assert set(summary["per_seed"]) == {"0", "1"}
    mati = summary["mean"]["mati"]
    for d in DISTRIBUTIONS:
        vals = [summary["per_seed"][s]["mati"][d]["mae"] for s in ("0", "1")]
        assert mati[d]["mae"] == pytest.approx(np.mean(vals))
    assert mati["mean_mae"] == pytest.approx(np.mean([mati[d]["mae"] for d in DISTRIBUTIONS]))
    text = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert text[0] == "seed,method,distribution,mae,rmse,mape"
    assert any(ln.startswith("mean,mati,") for ln in text)
