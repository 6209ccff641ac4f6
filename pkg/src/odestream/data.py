"""Dataset ingestion, chronological splitting, scaling, windowing and cutout.

Timestamps are kept as float seconds since the epoch; each window's time grid
is rescaled to ``[0, 1]`` so Euler step counts stay bounded whatever the
sampling rate.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import numpy as np

from . import container
from .errors import DataError

TASKS = ("uni2uni", "multi2uni", "multi2multi")
MIN_STD = 1e-12
SERIES_CACHE_KIND = "odestream-series"

# Default target columns of the public benchmark files, keyed by file stem.
PRESET_TARGETS = {
    "ETTh1": "OT", "ETTh2": "OT", "ETTm1": "OT", "ETTm2": "OT",
    "WTH": "WetBulbCelsius", "ECL": None,  # ECL: first client column
}


@dataclass(frozen=True)
class Schema:
    timestamp: str = "date"
    target: str | None = None        # None: last feature column
    features: tuple[str, ...] | None = None  # None: every non-timestamp column


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class TimeSeriesDataset:
    """Timestamps, a T x D feature matrix, and an optional observation mask.

    ``target_columns`` index into the feature columns.  ``mask`` is ``None``
    for fully observed data; masked-out cells hold NaN in ``values``.
    """

    timestamps: np.ndarray
    values: np.ndarray
    feature_names: list[str]
    target_columns: tuple[int, ...] = (-1,)
    mask: np.ndarray | None = None
    stats: NormalizationStats | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be a T x D matrix, got shape {self.values.shape}")
        if self.timestamps.shape != (self.values.shape[0],):
            raise DataError("timestamps and values have different lengths")
        if len(self.feature_names) != self.values.shape[1]:
            raise DataError("feature_names length does not match the number of columns")
        d = self.values.shape[1]
        self.target_columns = tuple(c % d for c in self.target_columns)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return np.ones(self.values.shape, dtype=bool) if self.mask is None else self.mask

    def rows(self, start: int, stop: int) -> "TimeSeriesDataset":
        return dataclasses.replace(
            self, timestamps=self.timestamps[start:stop], values=self.values[start:stop],
            mask=None if self.mask is None else self.mask[start:stop],
        )


# -- loading -------------------------------------------------------------------

def load_schema(path: str | Path) -> Schema:
    """Parse a ``key = value`` schema file (keys: timestamp, target, features)."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    unknown = set(entries) - {"timestamp", "target", "features"}
    if unknown:
        raise DataError(f"{path}: unknown schema keys {sorted(unknown)}")
    features = entries.get("features")
    return Schema(
        timestamp=entries.get("timestamp", "date"),
        target=entries.get("target") or None,
        features=tuple(f.strip() for f in features.split(",") if f.strip()) if features else None,
    )


def schema_for(path: str | Path) -> Schema:
    """Default schema for a known benchmark file name, else the generic default."""
    return Schema(target=PRESET_TARGETS.get(Path(path).stem))


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_csv(path: str | Path, schema: Schema | None = None) -> TimeSeriesDataset:
    """Read a headered CSV into a chronologically sorted dataset.

    Unparseable cells raise :class:`DataError` listing the offending lines.
    Out-of-order timestamps are sorted with a warning.
    """
    path = Path(path)
    schema = schema or schema_for(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema.timestamp not in header:
            raise DataError(f"{path}: timestamp column {schema.timestamp!r} not found")
        features = list(schema.features) if schema.features else [h for h in header if h != schema.timestamp]
        target = schema.target
        if target is None:
            target = features[0] if path.stem == "ECL" else features[-1]
        if target not in features:
            raise DataError(f"{path}: target column {target!r} is not among the features")
        missing = [f for f in features if f not in header]
        if missing:
            raise DataError(f"{path}: columns not found: {missing}")
        t_idx = header.index(schema.timestamp)
        f_idx = [header.index(f) for f in features]
        stamps, rows, bad = [], [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                stamps.append(_parse_time(rec[t_idx]))
            except (ValueError, IndexError):
                bad.append(f"line {lineno}, column {schema.timestamp!r}")
                continue
            row = []
            for name, i in zip(features, f_idx):
                try:
                    cell = rec[i].strip()
                    v = float(cell)
                    if not math.isfinite(v):
                        raise ValueError
                except (ValueError, IndexError):
                    bad.append(f"line {lineno}, column {name!r}")
                    v = math.nan
                row.append(v)
            rows.append(row)
    if bad:
        shown = "; ".join(bad[:10]) + (f"; ... ({len(bad)} total)" if len(bad) > 10 else "")
        raise DataError(f"{path}: unparseable cells: {shown}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    ts = np.asarray(stamps)
    vals = np.asarray(rows)
    if np.any(np.diff(ts) < 0):
        warnings.warn(f"{path}: timestamps not monotone; sorting rows chronologically", stacklevel=2)
        order = np.argsort(ts, kind="stable")
        ts, vals = ts[order], vals[order]
    return TimeSeriesDataset(ts, vals, features, (features.index(target),))


def select_task(ds: TimeSeriesDataset, task: str) -> TimeSeriesDataset:
    """Restrict columns for a task variant.

    ``uni2uni`` keeps only the target column; ``multi2uni`` keeps every
    feature and predicts the target; ``multi2multi`` predicts every feature.
    """
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; choose from {TASKS}")
    (target,) = ds.target_columns[:1]
    if task == "uni2uni":
        mask = None if ds.mask is None else ds.mask[:, [target]]
        return dataclasses.replace(ds, values=ds.values[:, [target]], feature_names=[ds.feature_names[target]],
                                   target_columns=(0,), mask=mask, stats=None)
    if task == "multi2uni":
        return dataclasses.replace(ds, target_columns=(target,))
    return dataclasses.replace(ds, target_columns=tuple(range(ds.n_features)))


# -- splitting and scaling -----------------------------------------------------

def split_chronological(ds: TimeSeriesDataset, train_fraction: float = 0.25) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """First ``floor(fraction * T)`` rows for warm-up, the rest for streaming."""
    n = len(ds)
    if n < 8:
        raise DataError(f"series of {n} rows is too short to split")
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    cut = int(math.floor(train_fraction * n))
    if cut < 1:
        raise DataError("training split would be empty")
    return ds.rows(0, cut), ds.rows(cut, n)


def fit_scaler(ds: TimeSeriesDataset | np.ndarray) -> NormalizationStats:
    """Per-feature mean and population standard deviation (ignoring NaN)."""
    values = ds.values if isinstance(ds, TimeSeriesDataset) else np.asarray(ds, dtype=np.float64)
    mean = np.nanmean(values, axis=0)
    std = np.nanstd(values, axis=0)
    flat = np.flatnonzero(~(std > MIN_STD))
    if flat.size:
        names = ds.feature_names if isinstance(ds, TimeSeriesDataset) else None
        cols = [names[i] for i in flat] if names else flat.tolist()
        raise DataError(f"zero-variance feature(s) {cols} cannot be standardised")
    return NormalizationStats(mean, std)


def apply_scaler(stats: NormalizationStats, ds: TimeSeriesDataset) -> TimeSeriesDataset:
    if stats.mean.shape != (ds.n_features,):
        raise DataError(f"scaler fitted on {stats.mean.size} features, dataset has {ds.n_features}")
    return dataclasses.replace(ds, values=(ds.values - stats.mean) / stats.std, stats=stats)


def inverse_scale(stats: NormalizationStats, values: np.ndarray, columns=None) -> np.ndarray:
    cols = slice(None) if columns is None else list(columns)
    return np.asarray(values) * stats.std[cols] + stats.mean[cols]


# -- windowing -----------------------------------------------------------------

def time_grid(timestamps: np.ndarray) -> np.ndarray:
    """Rescale window timestamps to ``[0, 1]``."""
    t = np.asarray(timestamps, dtype=np.float64)
    if t.size == 1:
        return np.zeros(1)
    span = t[-1] - t[0]
    if not span > 0:
        raise DataError("window timestamps are not strictly increasing")
    return (t - t[0]) / span


@dataclass
class Window:
    index: int          # row of the last input observation
    x: np.ndarray       # (lag, D)
    y: np.ndarray       # (horizon, n_targets)
    grid: np.ndarray    # (lag,) in [0, 1]


def n_windows(n_rows: int, lag: int, horizon: int) -> int:
    return max(0, n_rows - lag - horizon + 1)


def make_windows(ds: TimeSeriesDataset, lag: int = 24, horizon: int = 1) -> Iterator[Window]:
    """Stride-1 windows ``x[j-lag+1 .. j]`` with targets ``y[j+1 .. j+horizon]``."""
    if lag < 1 or horizon < 1:
        raise DataError("lag and horizon must be >= 1")
    if len(ds) < lag + horizon:
        raise DataError(f"series of {len(ds)} rows is shorter than lag + horizon = {lag + horizon}")
    targets = list(ds.target_columns)
    for j in range(lag - 1, len(ds) - horizon):
        yield Window(
            index=j,
            x=ds.values[j - lag + 1:j + 1],
            y=ds.values[j + 1:j + 1 + horizon][:, targets],
            grid=time_grid(ds.timestamps[j - lag + 1:j + 1]),
        )


# -- irregular sampling --------------------------------------------------------

def cutout_irregular(ds: TimeSeriesDataset, fraction: float = 0.3, seed: int = 0) -> TimeSeriesDataset:
    """Mask out ``floor(fraction * T)`` uniformly chosen entries of every attribute.

    Attributes are cut independently.  Masked cells become NaN; the returned
    dataset carries the boolean observation mask.
    """
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"cutout fraction must lie in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    n, d = ds.values.shape
    k = int(math.floor(fraction * n))
    mask = ds.observed.copy()
    for col in range(d):
        if k:
            mask[rng.choice(n, size=k, replace=False), col] = False
    values = np.where(mask, ds.values, np.nan)
    return dataclasses.replace(ds, values=values, mask=mask)


def mask_summary(ds: TimeSeriesDataset) -> dict:
    obs = ds.observed
    return {
        "rows": int(obs.shape[0]),
        "observed_fraction": float(obs.mean()),
        "observed_fraction_per_feature": {n: float(f) for n, f in zip(ds.feature_names, obs.mean(axis=0))},
    }


# -- synthetic signals ---------------------------------------------------------

SYNTHETIC_KINDS = ("sine", "constant", "step", "random_walk", "mean_shift")


def synthesize(kind: str, length: int, params: dict | None = None, seed: int = 0) -> TimeSeriesDataset:
    """Deterministic univariate test signals on an hourly time axis.

    ========== ==========================================================
    sine        amplitude * sin(2 pi t / period) + noise
    constant    value everywhere
    step        low before ``at``, high from ``at`` on
    random_walk cumulative sum of N(0, sigma^2) innovations
    mean_shift  before + noise until ``at``, after + noise from ``at`` on
    ========== ==========================================================
    """
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    noise = float(p.get("noise", 0.0))
    if kind == "sine":
        x = float(p.get("amplitude", 1.0)) * np.sin(2 * np.pi * t / float(p.get("period", 50.0)))
    elif kind == "constant":
        x = np.full(length, float(p.get("value", 0.0)))
    elif kind == "step":
        at = int(p.get("at", length // 2))
        x = np.where(t < at, float(p.get("low", 0.0)), float(p.get("high", 1.0)))
    elif kind == "random_walk":
        x = np.cumsum(rng.normal(0.0, float(p.get("sigma", 1.0)), length))
    elif kind == "mean_shift":
        at = int(p.get("at", length // 2))
        x = np.where(t < at, float(p.get("before", 0.0)), float(p.get("after", 1.0)))
        noise = float(p.get("sigma", noise))
    else:
        raise DataError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    if noise:
        x = x + rng.normal(0.0, noise, length)
    return TimeSeriesDataset(t * 3600.0, x[:, None], [kind], (0,))


# -- cache ---------------------------------------------------------------------

def save_series_cache(ds: TimeSeriesDataset, path: str | Path) -> str:
    header = {
        "kind": SERIES_CACHE_KIND, "feature_names": list(ds.feature_names),
        "target_columns": list(ds.target_columns),
        "stats": ds.stats.to_dict() if ds.stats is not None else None,
    }
    arrays = {"timestamps": ds.timestamps, "values": ds.values}
    if ds.mask is not None:
        arrays["mask"] = ds.mask.astype(np.float64)
    return container.write(path, header, arrays)


def load_series_cache(path: str | Path) -> TimeSeriesDataset:
    header, arrays = container.read(path)
    if header.get("kind") != SERIES_CACHE_KIND:
        raise DataError(f"{path} is not a series cache")
    mask = arrays.get("mask")
    return TimeSeriesDataset(
        arrays["timestamps"], arrays["values"], header["feature_names"], tuple(header["target_columns"]),
        mask=None if mask is None else mask.astype(bool),
        stats=NormalizationStats.from_dict(header["stats"]) if header["stats"] else None,
    )
