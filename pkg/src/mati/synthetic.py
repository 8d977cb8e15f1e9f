"""Synthetic right-skewed regression data with known label regions.

Each row belongs to a latent region ``z`` with probabilities ``props``. The
target is the region's level plus a feature-driven term and noise, so the
label density is a Gaussian mixture whose weights decrease to the right.
Feature ``x1`` carries a noisy signal of the region (its mean is
``z * separation``); ``x2`` drives the target linearly within every region;
the remaining features are pure noise. Because ``x1`` only weakly identifies
the region, the conditional target distribution spans neighbouring regions
and models trained under different region emphasis disagree.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import CATEGORICAL, NUMERIC, FeatureSchema, TabularDataset, write_csv


def region_dataset(n: int = 6000, seed: int = 0, props=(0.6, 0.28, 0.12), levels=(0.0, 5.0, 11.0),
                   separation: float = 1.5, x1_noise: float = 0.7, slope: float = 1.0, noise: float = 1.0,
                   n_noise_features: int = 2, with_categorical: bool = False) -> tuple[TabularDataset, np.ndarray]:
    """Return (dataset, region labels)."""
    props = np.asarray(props, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if len(props) != len(levels):
        raise ValueError("props and levels must have the same length")
    if np.any(props <= 0) or not np.isclose(props.sum(), 1.0):
        raise ValueError("props must be positive and sum to 1")
    rng = np.random.default_rng(seed)
    z = rng.choice(len(props), size=n, p=props)
    x1 = rng.normal(z * separation, x1_noise)
    x2 = rng.normal(0.0, 1.0, n)
    extra = rng.normal(0.0, 1.0, (n, n_noise_features))
    y = levels[z] + slope * x2 + rng.normal(0.0, noise, n)
    cols = [("x1", NUMERIC), ("x2", NUMERIC)] + [(f"x{i + 3}", NUMERIC) for i in range(n_noise_features)]
    X = np.column_stack([x1, x2, extra])
    tables = {}
    if with_categorical:
        # an uninformative 3-level categorical column
        cols.append(("c", CATEGORICAL))
        X = np.column_stack([X, rng.integers(0, 3, n).astype(float)])
        tables["c"] = ("a", "b", "c")
    schema = FeatureSchema(tuple(cols), "y")
    return TabularDataset(schema, X, y, tables), z


def write_dataset(ds: TabularDataset, out_dir, name: str = "data") -> tuple[Path, Path]:
    """Write ``<name>.csv`` and ``<name>.schema.json`` for use in a run config."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_csv(ds, csv_path)
    schema = ds.schema.to_dict()
    if ds.code_tables:
        schema["code_tables"] = {k: list(v) for k, v in ds.code_tables.items()}
    schema_path = out / f"{name}.schema.json"
    schema_path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    return csv_path, schema_path
