"""Download public benchmark datasets and convert them to CSV + schema files.

Files live under a cache directory (``$MATI_DATA_CACHE``, default
``~/.cache/mati``), one sub-directory per dataset::

    <cache>/abalone/raw/abalone.data     original archive member
    <cache>/abalone/SHA256               pinned checksum of the raw file
    <cache>/abalone/abalone.csv          headered CSV
    <cache>/abalone/schema.json          FeatureSchema + code tables

A dataset whose raw file, checksum and converted files are all present is
served from the cache without touching the network.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

CACHE_ENV = "MATI_DATA_CACHE"
UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"


class FetchError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetSource:
    name: str
    url: str
    raw_name: str
    sha256: str | None  # pinned upstream checksum, when known
    convert: Callable[[bytes], tuple[list[str], list[list[str]], dict]]


@dataclass(frozen=True)
class FetchedDataset:
    name: str
    csv_path: Path
    schema_path: Path
    sha256: str
    cache_hit: bool


ABALONE_COLUMNS = [
    "Sex", "Length", "Diameter", "Height", "Whole_weight",
    "Shucked_weight", "Viscera_weight", "Shell_weight", "Rings",
]
ABALONE_ROWS = 4177


def _convert_abalone(raw: bytes):
    text = raw.decode("ascii")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(t.strip() for t in r)]
    if len(rows) != ABALONE_ROWS:
        raise FetchError(f"abalone: expected {ABALONE_ROWS} rows, found {len(rows)}")
    for i, r in enumerate(rows, start=1):
        if len(r) != 9:
            raise FetchError(f"abalone: row {i} has {len(r)} fields, expected 9")
        if r[0] not in ("M", "F", "I"):
            raise FetchError(f"abalone: row {i} has unknown sex code {r[0]!r}")
        try:
            [float(t) for t in r[1:]]
        except ValueError:
            raise FetchError(f"abalone: row {i} has a non-numeric measurement") from None
    schema = {
        "target": "Rings",
        "columns": [{"name": "Sex", "kind": "categorical"}]
        + [{"name": n, "kind": "numeric"} for n in ABALONE_COLUMNS[1:-1]],
        "code_tables": {"Sex": ["F", "I", "M"]},
    }
    return ABALONE_COLUMNS, [[t.strip() for t in r] for r in rows], schema


BIKE_FEATURES = [
    ("season", "categorical"), ("yr", "numeric"), ("mnth", "numeric"), ("hr", "numeric"),
    ("holiday", "numeric"), ("weekday", "numeric"), ("workingday", "numeric"),
    ("weathersit", "categorical"), ("temp", "numeric"), ("atemp", "numeric"),
    ("hum", "numeric"), ("windspeed", "numeric"),
]
BIKE_ROWS = 17379


def _convert_bike(raw: bytes):
    try:
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            text = zf.read("hour.csv").decode("utf-8")
    except (zipfile.BadZipFile, KeyError) as exc:
        raise FetchError(f"bike-sharing: archive does not contain hour.csv ({exc})") from None
    reader = csv.DictReader(io.StringIO(text))
    wanted = [n for n, _ in BIKE_FEATURES] + ["cnt"]
    missing = [n for n in wanted if n not in (reader.fieldnames or [])]
    if missing:
        raise FetchError(f"bike-sharing: hour.csv lacks columns {missing}")
    rows = [[rec[n] for n in wanted] for rec in reader]
    if len(rows) != BIKE_ROWS:
        raise FetchError(f"bike-sharing: expected {BIKE_ROWS} rows, found {len(rows)}")
    # casual/registered sum to cnt and are left out on purpose
    schema = {
        "target": "cnt",
        "columns": [{"name": n, "kind": k} for n, k in BIKE_FEATURES],
        "code_tables": {"season": ["1", "2", "3", "4"], "weathersit": ["1", "2", "3", "4"]},
    }
    return wanted, rows, schema


SOURCES = {
    "abalone": DatasetSource("abalone", f"{UCI}/abalone/abalone.data", "abalone.data", None, _convert_abalone),
    "bike-sharing": DatasetSource(
        "bike-sharing", f"{UCI}/00275/Bike-Sharing-Dataset.zip", "Bike-Sharing-Dataset.zip", None, _convert_bike
    ),
}


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "mati")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _download(url: str, timeout: float = 60.0) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except OSError as exc:
        raise FetchError(f"download of {url} failed: {exc}") from None


def _write_converted(src: DatasetSource, raw: bytes, target: Path) -> tuple[Path, Path]:
    header, rows, schema = src.convert(raw)
    csv_path = target / f"{src.name}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    schema_path = target / "schema.json"
    schema_path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    return csv_path, schema_path


def fetch_data(name: str, cache: str | Path | None = None, url: str | None = None,
               sha256: str | None = None, log: Callable[[str], None] | None = None) -> FetchedDataset:
    """Fetch ``name`` into the cache and return the converted file paths.

    The raw bytes must match ``sha256`` when given, else the checksum pinned in
    the cache, else the source's built-in pin. With no pin at all, the first
    download that passes structural validation is pinned and every later
    use is checked against it. A mismatch is always an error.
    """
    log = log or (lambda _msg: None)
    if name not in SOURCES:
        raise FetchError(f"unknown dataset {name!r}; choose from {sorted(SOURCES)}")
    src = SOURCES[name]
    target = Path(cache) if cache is not None else cache_dir()
    target = target / name
    raw_path = target / "raw" / src.raw_name
    pin_path = target / "SHA256"
    pinned = pin_path.read_text().strip() if pin_path.exists() else None
    expected = sha256 or pinned or src.sha256
    if pinned and sha256 and pinned != sha256:
        raise FetchError(f"{name}: requested checksum {sha256} differs from the pinned {pinned}")

    if raw_path.exists():
        raw = raw_path.read_bytes()
        digest = sha256_bytes(raw)
        if expected and digest != expected:
            raise FetchError(f"{name}: checksum mismatch for cached {raw_path} (got {digest}, expected {expected})")
        csv_path, schema_path = target / f"{name}.csv", target / "schema.json"
        if csv_path.exists() and schema_path.exists():
            log(f"fetch dataset={name} status=cache-hit")
            return FetchedDataset(name, csv_path, schema_path, digest, True)
        hit = True
    else:
        source_url = url or src.url
        log(f"fetch dataset={name} status=downloading url={source_url}")
        raw = _download(source_url)
        digest = sha256_bytes(raw)
        if expected and digest != expected:
            raise FetchError(f"{name}: checksum mismatch for download (got {digest}, expected {expected})")
        src.convert(raw)  # validate before anything is written
        raw_path.parent.mkdir(parents=True, exist_ok=True)
        raw_path.write_bytes(raw)
        hit = False
    target.mkdir(parents=True, exist_ok=True)
    if not pinned:
        pin_path.write_text(digest + "\n")
    csv_path, schema_path = _write_converted(src, raw, target)
    log(f"fetch dataset={name} status=done rows_csv={csv_path}")
    return FetchedDataset(name, csv_path, schema_path, digest, hit)
