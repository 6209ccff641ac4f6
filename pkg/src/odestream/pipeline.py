"""End-to-end experiment plumbing shared by the CLI and the acceptance suite.

load -> task columns -> chronological split -> scale on the warm-up prefix ->
warm-up -> (optional cutout of the stream split) -> stream -> ADWIN annotation.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (TASKS, TimeSeriesDataset, apply_scaler, cutout_irregular, fit_scaler, load_csv,
                   load_schema, mask_summary, schema_for, select_task, split_chronological, synthesize)
from .drift import annotate_report
from .errors import ConfigMismatchError, DataError
from .model import ModelConfig, OdeStreamModel, checkpoint_load
from .stream import StreamReport, run_naive_baseline, run_stream, run_stream_irregular
from .training import WarmupConfig, WarmupResult, warmup_train

DATA_DIR_ENV = "ODESTREAM_DATA_DIR"
SYNTHETIC_PREFIX = "synthetic:"
METHODS = ("odestream", "frozen", "persistence")

ABLATIONS = {
    # name: (til_enabled, kl_enabled, l1_enabled)
    "no_til_mse": (False, False, False),
    "no_til_mse_kl": (False, True, False),
    "til_mse": (True, False, False),
    "odestream": (True, True, True),
}


@dataclass
class RunConfig:
    data: str = ""
    schema: str | None = None
    task: str = "multi2uni"
    lag: int = 24
    horizon: int = 1
    seed: int = 0
    hidden_dim: int = 64
    latent_dim: int = 64
    train_fraction: float = 0.25
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    online_lr: float = 1e-3
    til_enabled: bool = True
    kl_enabled: bool = True
    l1_enabled: bool = True
    cutout: float = 0.0
    delta: float = 0.002
    out_dir: str = "runs"
    run_id: str | None = None

    def validate(self) -> "RunConfig":
        if not self.data:
            raise DataError("no dataset given (--data)")
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}; choose from {TASKS}")
        for name in ("lag", "horizon", "hidden_dim", "latent_dim", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.train_fraction < 1:
            raise DataError("train_fraction must lie strictly between 0 and 1")
        if not 0 <= self.cutout < 1:
            raise DataError("cutout must lie in [0, 1)")
        if not 0 < self.delta < 1:
            raise DataError("delta must lie in (0, 1)")
        if not (self.lr > 0 and self.online_lr > 0):
            raise DataError("learning rates must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def warmup_config(self) -> WarmupConfig:
        return WarmupConfig(batch_size=self.batch_size, max_epochs=self.max_epochs, patience=self.patience,
                            lr=self.lr, kl_enabled=self.kl_enabled, l1_enabled=self.l1_enabled)

    def model_config(self, input_dim: int, target_dim: int) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, hidden_dim=self.hidden_dim, latent_dim=self.latent_dim,
                           lag=self.lag, horizon=self.horizon, target_dim=target_dim, seed=self.seed,
                           til_enabled=self.til_enabled)

    @property
    def dataset_name(self) -> str:
        if self.data.startswith(SYNTHETIC_PREFIX):
            return self.data[len(SYNTHETIC_PREFIX):].split(":")[0]
        return Path(self.data).stem


# -- data --------------------------------------------------------------------

def resolve_data_path(name: str) -> Path:
    """Absolute or cwd-relative paths win; otherwise look in ``$ODESTREAM_DATA_DIR``."""
    p = Path(name).expanduser()
    if p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / name).exists():
        return Path(base) / name
    hint = f" (also looked in ${DATA_DIR_ENV}={base})" if base else f" (set ${DATA_DIR_ENV} to a data directory)"
    raise DataError(f"dataset file {name!r} not found{hint}")


def parse_synthetic(spec: str) -> TimeSeriesDataset:
    """``synthetic:<kind>:<length>[:key=value,...]``; ``seed`` selects the noise draw."""
    parts = spec[len(SYNTHETIC_PREFIX):].split(":")
    if len(parts) < 2:
        raise DataError(f"synthetic spec {spec!r} must look like synthetic:<kind>:<length>[:k=v,...]")
    kind, length = parts[0], parts[1]
    params: dict = {}
    if len(parts) > 2 and parts[2]:
        for item in parts[2].split(","):
            if "=" not in item:
                raise DataError(f"bad synthetic parameter {item!r}")
            k, v = item.split("=", 1)
            params[k.strip()] = float(v)
    seed = int(params.pop("seed", 0))
    try:
        n = int(length)
    except ValueError as exc:
        raise DataError(f"synthetic length {length!r} is not an integer") from exc
    return synthesize(kind, n, params, seed=seed)


def load_dataset(cfg: RunConfig) -> TimeSeriesDataset:
    if cfg.data.startswith(SYNTHETIC_PREFIX):
        ds = parse_synthetic(cfg.data)
    else:
        path = resolve_data_path(cfg.data)
        schema = load_schema(resolve_data_path(cfg.schema)) if cfg.schema else schema_for(path)
        ds = load_csv(path, schema)
    return select_task(ds, cfg.task)


@dataclass
class Prepared:
    train: TimeSeriesDataset        # normalised warm-up prefix
    stream: TimeSeriesDataset       # normalised stream split (masked when cutout > 0)
    stats: object
    mask_stats: dict | None = None
    lag: int = 24

    @property
    def context(self) -> TimeSeriesDataset:
        """Last ``lag - 1`` warm-up rows, so the first window ends at stream row 0."""
        return self.train.rows(len(self.train) - (self.lag - 1), len(self.train))


def prepare(cfg: RunConfig, ds: TimeSeriesDataset | None = None) -> Prepared:
    ds = load_dataset(cfg) if ds is None else ds
    train, stream = split_chronological(ds, cfg.train_fraction)
    if len(train) < cfg.lag + 1:
        raise DataError(f"warm-up split has {len(train)} rows; need at least lag+1={cfg.lag + 1}")
    stats = fit_scaler(train)
    train_n, stream_n = apply_scaler(stats, train), apply_scaler(stats, stream)
    mask_stats = None
    if cfg.cutout > 0:
        stream_n = cutout_irregular(stream_n, cfg.cutout, seed=cfg.seed)
        mask_stats = mask_summary(stream_n)
    return Prepared(train_n, stream_n, stats, mask_stats, lag=cfg.lag)


def checkpoint_metadata(cfg: RunConfig, prep: Prepared, result: WarmupResult | None = None) -> dict:
    meta = {
        "dataset": cfg.dataset_name, "task": cfg.task, "train_fraction": cfg.train_fraction,
        "feature_names": list(prep.train.feature_names), "target_columns": list(prep.train.target_columns),
        "scaler": prep.stats.to_dict(), "kl_enabled": cfg.kl_enabled, "l1_enabled": cfg.l1_enabled,
    }
    if result is not None:
        meta["warmup"] = {"epochs_run": result.epochs_run, "best_epoch": result.best_epoch,
                          "best_val_loss": result.best_val_loss, "best_val_mse": result.best_val_mse}
    return meta


# -- phases ------------------------------------------------------------------

def warmup(cfg: RunConfig, prep: Prepared) -> tuple[OdeStreamModel, WarmupResult]:
    model = OdeStreamModel(cfg.model_config(prep.train.n_features, len(prep.train.target_columns)))
    result = warmup_train(model, prep.train.values, cfg.warmup_config(), seed=cfg.seed)
    return model, result


def load_compatible(path: str | Path, cfg: RunConfig, prep: Prepared) -> tuple[OdeStreamModel, dict]:
    """Load a checkpoint and check it fits both the run config and the dataset columns."""
    expected = cfg.model_config(prep.train.n_features, len(prep.train.target_columns))
    model, meta = checkpoint_load(path, expected)
    for key, have in (("feature_names", list(prep.train.feature_names)),
                      ("target_columns", list(prep.train.target_columns)), ("task", cfg.task)):
        if key in meta and meta[key] != have:
            raise ConfigMismatchError(f"checkpoint {key}={meta[key]!r} but the run uses {have!r}")
    return model, meta


def stream(model: OdeStreamModel | None, cfg: RunConfig, prep: Prepared, method: str = "odestream",
           *, instrument: bool = False, annotate: bool = True) -> StreamReport:
    if method not in METHODS:
        raise DataError(f"unknown method {method!r}; choose from {METHODS}")
    kw = dict(context=prep.context, instrument=instrument)
    if method == "persistence":
        if cfg.cutout > 0:
            raise DataError("the persistence baseline runs on fully observed streams only")
        report = run_naive_baseline(prep.stream, cfg.horizon, cfg.lag, **kw)
    else:
        runner = run_stream_irregular if cfg.cutout > 0 else run_stream
        report = runner(model, prep.stream, cfg.horizon, cfg.seed, learn=(method == "odestream"),
                        kl_enabled=cfg.kl_enabled, l1_enabled=cfg.l1_enabled, lr=cfg.online_lr, **kw)
    report.config = {"run": cfg.to_dict(), "method": method, **report.config}
    return annotate_report(report, cfg.delta) if annotate else report


def run_experiment(cfg: RunConfig, method: str = "odestream", ds: TimeSeriesDataset | None = None,
                   **kw) -> tuple[StreamReport, OdeStreamModel | None, Prepared]:
    """Warm up (unless persistence) and stream in one call."""
    cfg.validate()
    prep = prepare(cfg, ds)
    model = None if method == "persistence" else warmup(cfg, prep)[0]
    return stream(model, cfg, prep, method, **kw), model, prep


def ablation_configs(cfg: RunConfig) -> dict[str, RunConfig]:
    return {name: cfg.replace(til_enabled=t, kl_enabled=k, l1_enabled=l) for name, (t, k, l) in ABLATIONS.items()}


def post_shift_rolling_mse(report: StreamReport, shift_step: int, window: int = 500) -> float:
    """Mean of the trailing-window MSE over steps at or after ``shift_step``."""
    from .report import rolling_mse_trace

    idx = np.array([s.index for s in report.steps])
    trace = rolling_mse_trace(report, window)
    sel = idx >= shift_step
    if not sel.any():
        raise DataError("no steps after the shift")
    return float(np.nanmean(trace[sel]))
