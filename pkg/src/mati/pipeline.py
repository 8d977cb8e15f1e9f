"""End-to-end orchestration: split, GMM, synthesis, experts, aggregation, evaluation.

Every stage writes into a per-seed directory of the run directory and leaves
a ``stage.json`` manifest holding a content key (config section plus the
hashes of the stage's input files) and the hashes of its outputs. A stage
whose key and outputs are unchanged is skipped and reported as a cache hit.
Later stages always read their inputs back from disk, so a cached run and a
fresh run go through identical code.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .data import (
    DISTRIBUTIONS,
    BinningScheme,
    FeatureSchema,
    TabularDataset,
    load_csv,
    load_splits,
    make_splits,
    read_flagged_csv,
    read_schema,
    save_splits,
    write_csv,
)
from .evaluation import EvalReport, ShotThresholds, evaluate, perturbation_sweep, sweep_csv
from .expert import ExpertError, ExpertModel, MlpConfig, train_expert
from .gmm import GmmConfig, GmmModel, fit_em, posterior_assign, select_by_aic
from .synth import SynthConfig, synthesize_full, synthesize_region
from .ttsa import AggregationError, AggregationWeights, TtsaConfig, aggregate, predict_aggregated

METHODS = ("mati", "vanilla", "smogn")
STAGE_FILE = "stage.json"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------- config


@dataclass
class BinningConfig:
    bin_width: float = 1.0
    origin: float | None = None
    num_bins: int | None = None


@dataclass
class RunConfig:
    dataset: str = ""
    schema: str | dict = ""
    binning: BinningConfig = field(default_factory=BinningConfig)
    test_pool_fraction: float = 0.2
    n_max: int = 6
    # fixes the component count instead of choosing it by AIC
    n_components: int | None = None
    gmm: GmmConfig = field(default_factory=GmmConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    region_synth: SynthConfig = field(default_factory=lambda: SynthConfig(oversample_target=4.0))
    # "gmm": component stddev; "partition": stddev of D_S rows assigned to the component
    sigma_source: str = "gmm"
    expert: MlpConfig = field(default_factory=MlpConfig)
    ttsa: TtsaConfig = field(default_factory=TtsaConfig)
    shots: ShotThresholds = field(default_factory=ShotThresholds)
    seeds: list[int] = field(default_factory=lambda: [0])
    baselines: list[str] = field(default_factory=lambda: ["vanilla", "smogn"])

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        self.baselines = list(self.baselines)
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        bad = [b for b in self.baselines if b not in ("vanilla", "smogn")]
        if bad:
            raise ConfigError(f"unknown baselines {bad}; choose from vanilla, smogn")
        if self.sigma_source not in ("gmm", "partition"):
            raise ConfigError(f"sigma_source must be gmm or partition, not {self.sigma_source!r}")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.n_components is not None and self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if not 0 < self.test_pool_fraction < 0.5:
            raise ConfigError("test_pool_fraction must lie in (0, 0.5)")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d or {}, "")


_NESTED = {
    "binning": BinningConfig, "gmm": GmmConfig, "synth": SynthConfig, "region_synth": SynthConfig,
    "expert": MlpConfig, "ttsa": TtsaConfig, "shots": ShotThresholds,
}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _build(cls, d: dict, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for k, v in d.items():
        sub = _NESTED.get(k) if cls is RunConfig else None
        kwargs[k] = _build(sub, v, f"{k}.") if sub else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, AggregationError, ExpertError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars/lists."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError:
            value = raw
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p, {}), dict):
                raise ConfigError(f"override {item!r}: {p!r} is not a section")
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return d


def load_config(path=None, overrides: list[str] | None = None, seed: int | None = None) -> RunConfig:
    """Defaults, then the YAML file, then ``overrides``, then ``seed``.

    Relative dataset and schema paths are resolved against the file's directory.
    """
    d = RunConfig().to_dict()
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: malformed YAML ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(d, loaded)
        base = path.resolve().parent
    d = apply_overrides(d, overrides or [])
    if seed is not None:
        d["seeds"] = [int(seed)]
    for key in ("dataset", "schema"):
        if isinstance(d.get(key), str) and d[key] and not Path(d[key]).is_absolute():
            d[key] = str((base / d[key]).resolve())
    return RunConfig.from_dict(d)


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict) and k != "schema":
            _merge(dst[k], v)
        else:
            dst[k] = v


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


# ---------------------------------------------------------------- helpers


def derive_seed(run_seed: int, *parts: int) -> int:
    """Independent, reproducible seed for one stage/component of a run."""
    return int(np.random.SeedSequence([int(run_seed), *[int(p) for p in parts]]).generate_state(1)[0])


_STAGE_IDS = {"split": 1, "gmm": 2, "synth": 3, "region": 4, "expert": 5, "ttsa": 6, "vanilla": 7, "smogn": 8}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key(material) -> str:
    return hashlib.sha256(json.dumps(_plain(material), sort_keys=True).encode()).hexdigest()


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def load_dataset(cfg: RunConfig) -> TabularDataset:
    if not cfg.dataset:
        raise ConfigError("no dataset path configured")
    if isinstance(cfg.schema, dict):
        schema, tables = FeatureSchema.from_dict(cfg.schema), cfg.schema.get("code_tables")
    elif cfg.schema:
        schema, tables = read_schema(cfg.schema)
    else:
        raise ConfigError("no schema configured")
    return load_csv(cfg.dataset, schema, tables)


class Run:
    """A run directory plus the stage runner used by every stage function."""

    def __init__(self, cfg: RunConfig, out_dir, log: Callable[[str], None] | None = None):
        self.cfg = cfg
        self.root = Path(out_dir)
        self.log = log or (lambda _msg: None)
        self.root.mkdir(parents=True, exist_ok=True)
        save_config(cfg, self.root / "config.yaml")

    def dir(self, seed: int, stage: str) -> Path:
        return self.root / f"seed_{seed}" / stage

    def manifest(self, seed: int, stage: str) -> dict | None:
        p = self.dir(seed, stage) / STAGE_FILE
        return json.loads(p.read_text()) if p.exists() else None

    def require(self, seed: int, stage: str, needed: str, hint: str) -> dict:
        m = self.manifest(seed, needed)
        d = self.dir(seed, needed)
        if m is None or m.get("status") != "done":
            raise StageError(stage, f"missing {d / STAGE_FILE}; run `{hint}` first")
        missing = [str(d / f) for f in m["outputs"] if not (d / f).exists()]
        if missing:
            raise StageError(stage, f"missing model/artifact files {missing}; run `{hint}` first")
        return m

    def stage(self, seed: int, name: str, material: dict, build: Callable[[Path], dict]) -> dict:
        """Run ``build(dir)`` unless an identical stage already completed.

        ``build`` writes its files into ``dir`` and returns manifest details.
        Output hashes are recorded for every file it leaves behind.
        """
        d = self.dir(seed, name)
        key = _key({"stage": name, "version": __version__, **material})
        old = self.manifest(seed, name)
        if old and old.get("status") == "done" and old.get("key") == key:
            if all((d / f).exists() and file_sha256(d / f) == h for f, h in old["outputs"].items()):
                self.log(f"stage={name} seed={seed} status=cache-hit key={key[:12]}")
                return old
        d.mkdir(parents=True, exist_ok=True)
        for f in d.iterdir():
            if f.is_file():
                f.unlink()
        try:
            details = build(d) or {}
        except StageError:
            raise
        except Exception as exc:  # every failure is reported with the stage that raised it
            _dump({"stage": name, "seed": seed, "key": key, "status": "failed", "error": str(exc)}, d / STAGE_FILE)
            raise StageError(name, str(exc)) from exc
        outputs = {f.name: file_sha256(f) for f in sorted(d.iterdir()) if f.is_file() and f.name != STAGE_FILE}
        m = {"stage": name, "seed": seed, "key": key, "status": "done", "outputs": outputs, "details": details}
        _dump(m, d / STAGE_FILE)
        self.log(f"stage={name} seed={seed} status=done key={key[:12]}")
        return m


# ---------------------------------------------------------------- stages


def stage_split(run: Run, seed: int) -> dict:
    cfg = run.cfg
    ds = load_dataset(cfg)
    src_hash = file_sha256(cfg.dataset)
    material = {"dataset": src_hash, "schema": cfg.schema if isinstance(cfg.schema, dict) else file_sha256(cfg.schema),
                "binning": asdict(cfg.binning), "test_pool_fraction": cfg.test_pool_fraction, "seed": seed}

    def build(d: Path):
        b = cfg.binning
        scheme = BinningScheme.covering(ds.y, b.bin_width, b.origin, b.num_bins)
        bundle = make_splits(ds, scheme, cfg.test_pool_fraction, derive_seed(seed, _STAGE_IDS["split"]))
        save_splits(bundle, scheme, d)
        return {"sizes": {"train": len(bundle.train), **{k: len(bundle.test(k)) for k in DISTRIBUTIONS}}}

    return run.stage(seed, "split", material, build)


def _splits(run: Run, seed: int, stage: str):
    run.require(seed, stage, "split", "split")
    return load_splits(run.dir(seed, "split"))


def _inputs(run: Run, seed: int, *stages: str) -> dict:
    return {s: run.manifest(seed, s)["outputs"] for s in stages}


def stage_gmm(run: Run, seed: int) -> dict:
    cfg = run.cfg
    bundle, _ = _splits(run, seed, "gmm")
    gcfg = replace(cfg.gmm, seed=derive_seed(seed, _STAGE_IDS["gmm"], cfg.gmm.seed))
    material = {"inputs": _inputs(run, seed, "split"), "gmm": asdict(gcfg), "n_max": cfg.n_max,
                "n_components": cfg.n_components}

    def build(d: Path):
        if cfg.n_components is not None:
            g = fit_em(bundle.train.y, cfg.n_components, gcfg)
        else:
            g = select_by_aic(bundle.train.y, cfg.n_max, gcfg)
        g.save(d / "gmm.json")
        return {"n_components": g.n_components, "aic": g.aic}

    return run.stage(seed, "gmm", material, build)


def _gmm(run: Run, seed: int, stage: str) -> GmmModel:
    run.require(seed, stage, "gmm", "fit-gmm")
    return GmmModel.load(run.dir(seed, "gmm") / "gmm.json")


def region_sigmas(d_s: TabularDataset, gmm: GmmModel, source: str) -> list[float]:
    if source == "gmm":
        return [c.stddev for c in gmm.components]
    labels = posterior_assign(gmm, d_s.y)
    out = []
    for n, c in enumerate(gmm.components):
        ys = d_s.y[labels == n]
        # a component that owns fewer than two rows falls back to its own stddev
        out.append(float(ys.std()) if len(ys) > 1 and ys.std() > 0 else c.stddev)
    return out


def stage_synth(run: Run, seed: int) -> dict:
    cfg = run.cfg
    bundle, _ = _splits(run, seed, "synth")
    gmm = _gmm(run, seed, "synth")
    full_cfg = replace(cfg.synth, seed=derive_seed(seed, _STAGE_IDS["synth"], cfg.synth.seed))
    material = {"inputs": _inputs(run, seed, "split", "gmm"), "synth": asdict(full_cfg),
                "region_synth": asdict(cfg.region_synth), "sigma_source": cfg.sigma_source}

    def build(d: Path):
        full = synthesize_full(bundle.train, full_cfg)
        write_csv(full.data, d / "full.csv", with_flags=True)
        _dump(full.manifest(), d / "full.json")
        sigmas = region_sigmas(full.data, gmm, cfg.sigma_source)
        regions = []
        for n, (c, s) in enumerate(zip(gmm.components, sigmas)):
            rcfg = replace(cfg.region_synth, seed=derive_seed(seed, _STAGE_IDS["region"], cfg.region_synth.seed, n))
            res = synthesize_region(full.data, c.mean, s, rcfg)
            write_csv(res.data, d / f"region_{n}.csv", with_flags=True)
            _dump({"mu": c.mean, "sigma": s, **res.manifest()}, d / f"region_{n}.json")
            regions.append({"mu": c.mean, "sigma": s, "n_synthetic": res.n_synthetic})
        return {"full_n_synthetic": full.n_synthetic, "warning": full.warning, "regions": regions}

    return run.stage(seed, "synth", material, build)


def _region_data(run: Run, seed: int, stage: str, schema, tables, n_regions: int) -> list[TabularDataset]:
    run.require(seed, stage, "synth", "synth")
    d = run.dir(seed, "synth")
    return [read_flagged_csv(d / f"region_{n}.csv", schema, tables) for n in range(n_regions)]


def _expert_cfg(run: Run, seed: int, kind: str, n: int = 0) -> MlpConfig:
    cfg = run.cfg.expert
    return replace(cfg, seed=derive_seed(seed, _STAGE_IDS[kind], cfg.seed, n))


def stage_train_experts(run: Run, seed: int) -> dict:
    bundle, _ = _splits(run, seed, "experts")
    gmm = _gmm(run, seed, "experts")
    schema, tables = bundle.train.schema, bundle.train.code_tables
    data = _region_data(run, seed, "experts", schema, tables, gmm.n_components)
    sigmas = [json.loads((run.dir(seed, "synth") / f"region_{n}.json").read_text())["sigma"]
              for n in range(gmm.n_components)]
    cfgs = [_expert_cfg(run, seed, "expert", n) for n in range(gmm.n_components)]
    material = {"inputs": _inputs(run, seed, "synth", "gmm"), "expert": [asdict(c) for c in cfgs]}

    def build(d: Path):
        best = []
        for n, (ds, c, mcfg) in enumerate(zip(data, gmm.components, cfgs)):
            model = train_expert(ds, mcfg, c.mean, sigmas[n])
            model.save(d / f"expert_{n}.json")
            best.append(model.best_epoch)
        return {"n_experts": len(data), "best_epochs": best}

    return run.stage(seed, "experts", material, build)


def load_experts(run: Run, seed: int, stage: str) -> list[ExpertModel]:
    m = run.require(seed, stage, "experts", "train-experts")
    d = run.dir(seed, "experts")
    names = sorted((f for f in m["outputs"] if f.startswith("expert_")), key=lambda f: int(f[7:-5]))
    missing = [str(d / f) for f in names if not (d / f).exists()]
    if missing:
        raise StageError(stage, f"missing model files {missing}; run `train-experts` first")
    return [ExpertModel.load(d / f) for f in names]


def ttsa_config(run: Run, seed: int, distribution: str) -> TtsaConfig:
    t = run.cfg.ttsa
    return replace(t, seed=derive_seed(seed, _STAGE_IDS["ttsa"], t.seed, DISTRIBUTIONS.index(distribution)))


def stage_aggregate(run: Run, seed: int) -> dict:
    bundle, _ = _splits(run, seed, "aggregate")
    experts = load_experts(run, seed, "aggregate")
    tcfgs = {d: ttsa_config(run, seed, d) for d in DISTRIBUTIONS}
    material = {"inputs": _inputs(run, seed, "split", "experts"), "ttsa": {d: asdict(c) for d, c in tcfgs.items()}}

    def build(out: Path):
        summary = {}
        for d in DISTRIBUTIONS:
            # only the features of the test set are used here
            w = aggregate(experts, bundle.test(d).X, tcfgs[d])
            w.save(out / f"{d}.json")
            summary[d] = [float(v) for v in w.normalized]
        return {"weights": summary}

    return run.stage(seed, "weights", material, build)


def load_weights(run: Run, seed: int, stage: str) -> dict[str, AggregationWeights]:
    run.require(seed, stage, "weights", "aggregate")
    return {d: AggregationWeights.load(run.dir(seed, "weights") / f"{d}.json") for d in DISTRIBUTIONS}


def _baseline_models(run: Run, seed: int) -> dict:
    """Train the configured baselines (one expert each)."""
    cfg = run.cfg
    if not cfg.baselines:
        return {}
    bundle, _ = _splits(run, seed, "baselines")
    needs = ["split"]
    if "smogn" in cfg.baselines:
        run.require(seed, "baselines", "synth", "synth")
        needs.append("synth")
    cfgs = {b: _expert_cfg(run, seed, b) for b in cfg.baselines}
    material = {"inputs": _inputs(run, seed, *needs), "expert": {b: asdict(c) for b, c in cfgs.items()}}

    def build(d: Path):
        for b in cfg.baselines:
            if b == "vanilla":
                train = bundle.train
            else:
                train = read_flagged_csv(run.dir(seed, "synth") / "full.csv", bundle.train.schema, bundle.train.code_tables)
            train_expert(train, cfgs[b]).save(d / f"{b}.json")
        return {"baselines": list(cfg.baselines)}

    run.stage(seed, "baselines", material, build)
    return {b: ExpertModel.load(run.dir(seed, "baselines") / f"{b}.json") for b in cfg.baselines}


def stage_evaluate(run: Run, seed: int) -> dict:
    cfg = run.cfg
    bundle, scheme = _splits(run, seed, "evaluate")
    experts = load_experts(run, seed, "evaluate")
    weights = load_weights(run, seed, "evaluate")
    baselines = _baseline_models(run, seed)
    needs = ["split", "experts", "weights"] + (["baselines"] if baselines else [])
    material = {"inputs": _inputs(run, seed, *needs), "shots": asdict(cfg.shots)}

    def build(d: Path):
        fns = {k: (lambda X, w=w: predict_aggregated(experts, w, X)) for k, w in weights.items()}
        reports = {"mati": evaluate(fns, bundle, scheme, cfg.shots, {"method": "mati", "seed": seed,
                                                                     "n_experts": len(experts)})}
        for b, model in baselines.items():
            reports[b] = evaluate(model.predict, bundle, scheme, cfg.shots, {"method": b, "seed": seed})
        for name, rep in reports.items():
            rep.save(d / name)
        return {m: {k: v.mae for k, v in r.overall.items()} for m, r in reports.items()}

    return run.stage(seed, "reports", material, build)


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def stage_sweep(run: Run, seed: int, ratios, distribution: str = "balanced") -> dict:
    bundle, _ = _splits(run, seed, "sweep")
    experts = load_experts(run, seed, "sweep")
    if distribution not in DISTRIBUTIONS:
        raise StageError("sweep", f"unknown distribution {distribution!r}")
    tcfg = ttsa_config(run, seed, distribution)
    ratios = [float(r) for r in ratios]
    material = {"inputs": _inputs(run, seed, "split", "experts"), "ttsa": asdict(tcfg), "ratios": ratios,
                "distribution": distribution}

    def build(d: Path):
        rows = perturbation_sweep(experts, bundle, ratios, tcfg, distribution)
        (d / f"sweep_{distribution}.csv").write_text(sweep_csv(rows))
        return {"mae": [m.mae for _, m in rows]}

    return run.stage(seed, "sweep", material, build)


# ---------------------------------------------------------------- drivers


@dataclass
class RunResult:
    seed: int
    gmm: GmmModel
    experts: list[ExpertModel]
    weights: dict[str, AggregationWeights]
    reports: dict[str, EvalReport | dict]
    manifests: dict[str, dict]
    run_dir: Path


def run_mati(cfg: RunConfig, out_dir, seed: int | None = None, log=None, run: Run | None = None) -> RunResult:
    """All MATI stages for one seed (the first configured seed by default)."""
    run = run or Run(cfg, out_dir, log)
    seed = cfg.seeds[0] if seed is None else seed
    stages = [("split", stage_split), ("gmm", stage_gmm), ("synth", stage_synth),
              ("experts", stage_train_experts), ("weights", stage_aggregate), ("reports", stage_evaluate)]
    manifests = {name: fn(run, seed) for name, fn in stages}
    rdir = run.dir(seed, "reports")
    return RunResult(
        seed=seed,
        gmm=GmmModel.load(run.dir(seed, "gmm") / "gmm.json"),
        experts=load_experts(run, seed, "run"),
        weights=load_weights(run, seed, "run"),
        reports={m: load_report(rdir / f"{m}.json") for m in METHODS if (rdir / f"{m}.json").exists()},
        manifests=manifests,
        run_dir=run.root,
    )


def _baseline_report(cfg: RunConfig, out_dir, seed, log, method: str) -> dict:
    cfg = replace(cfg, baselines=[method])
    run = Run(cfg, out_dir, log)
    seed = cfg.seeds[0] if seed is None else seed
    stage_split(run, seed)
    if method == "smogn":
        stage_gmm(run, seed)
        stage_synth(run, seed)
    bundle, scheme = load_splits(run.dir(seed, "split"))
    model = _baseline_models(run, seed)[method]
    return evaluate(model.predict, bundle, scheme, cfg.shots, {"method": method, "seed": seed})


def run_baseline_vanilla(cfg: RunConfig, out_dir, seed: int | None = None, log=None) -> EvalReport:
    """One expert on the raw training split, scored on all three test sets."""
    return _baseline_report(cfg, out_dir, seed, log, "vanilla")


def run_baseline_smogn(cfg: RunConfig, out_dir, seed: int | None = None, log=None) -> EvalReport:
    """One expert on the whole-space oversampled training split."""
    return _baseline_report(cfg, out_dir, seed, log, "smogn")


def summarize(run: Run) -> dict:
    """Per-seed overall metrics for each method and their mean over seeds."""
    per_seed = {}
    for seed in run.cfg.seeds:
        rdir = run.dir(seed, "reports")
        per_seed[str(seed)] = {
            m: load_report(rdir / f"{m}.json")["overall"] for m in METHODS if (rdir / f"{m}.json").exists()
        }
    mean = {}
    for m in METHODS:
        rows = [r[m] for r in per_seed.values() if m in r]
        if not rows:
            continue
        mean[m] = {
            d: {k: float(np.mean([r[d][k] for r in rows])) for k in ("mae", "rmse", "mape")}
            for d in DISTRIBUTIONS if all(d in r for r in rows)
        }
        mean[m]["mean_mae"] = float(np.mean([mean[m][d]["mae"] for d in DISTRIBUTIONS if d in mean[m]]))
    summary = {"seeds": run.cfg.seeds, "per_seed": per_seed, "mean": mean}
    _dump(summary, run.root / "summary.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "method", "distribution", "mae", "rmse", "mape"])
    for seed, methods in per_seed.items():
        for m, overall in methods.items():
            for d, met in overall.items():
                w.writerow([seed, m, d, repr(met["mae"]), repr(met["rmse"]), repr(met["mape"])])
    for m, dists in mean.items():
        for d in DISTRIBUTIONS:
            if d in dists:
                w.writerow(["mean", m, d, repr(dists[d]["mae"]), repr(dists[d]["rmse"]), repr(dists[d]["mape"])])
    (run.root / "summary.csv").write_text(buf.getvalue())
    return summary


def run_all(cfg: RunConfig, out_dir, log=None) -> tuple[dict[int, RunResult], dict]:
    """MATI plus configured baselines for every seed, then the cross-seed summary."""
    run = Run(cfg, out_dir, log)
    results = {s: run_mati(cfg, out_dir, s, run=run) for s in cfg.seeds}
    return results, summarize(run)
