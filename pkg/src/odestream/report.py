"""Metrics, resource accounting and run-directory artifacts.

A run directory holds::

    summary.json    config echo, checkpoint hash, cumulative MSE (deterministic)
    trace.csv       one row per stream step
    predictions.svg truth vs prediction, ADWIN flags as red vertical lines
    loss.svg        rolling MSE and per-step update loss
    resources.json  wall-clock and memory figures (vary between runs)

Memory is the process resident set size sampled during the run, so it is
an approximate upper bound on what the learner itself holds.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import DataError
from .stream import StreamReport, StreamStep, _memory_mb

SUMMARY_VERSION = 1


def cumulative_mse(report: StreamReport) -> float:
    """Mean of the per-step MSE over all scored steps."""
    return report.cumulative_mse


def per_step_mse(report: StreamReport) -> np.ndarray:
    """Per-step MSE with NaN for unscored steps; length equals the step count."""
    return np.array([s.mse for s in report.steps], dtype=np.float64)


def rolling_mse_trace(report: StreamReport | Iterable[float], window: int = 500) -> np.ndarray:
    """Trailing-window mean of the per-step MSE, one value per step.

    Unscored (NaN) steps are left out of each window's mean; a window with no
    scored step yields NaN.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    mse = per_step_mse(report) if isinstance(report, StreamReport) else np.asarray(list(report), dtype=np.float64)
    ok = np.isfinite(mse)
    sums = np.concatenate([[0.0], np.cumsum(np.where(ok, mse, 0.0))])
    counts = np.concatenate([[0], np.cumsum(ok)])
    hi = np.arange(1, mse.size + 1)
    lo = np.maximum(hi - window, 0)
    n = counts[hi] - counts[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, (sums[hi] - sums[lo]) / np.maximum(n, 1), np.nan)


# -- metrics table ---------------------------------------------------------------

@dataclass
class MetricsTable:
    """Cumulative MSE keyed by (dataset, task, method, horizon); one row per key."""

    rows: dict[tuple[str, str, str, int], float] = field(default_factory=dict)

    COLUMNS = ("dataset", "task", "method", "horizon", "cumulative_mse")

    def add(self, dataset: str, task: str, method: str, horizon: int, value: float) -> None:
        key = (dataset, task, method, int(horizon))
        if key in self.rows:
            raise ValueError(f"duplicate metrics row {key}")
        if not value >= 0:
            raise ValueError(f"cumulative MSE must be non-negative, got {value}")
        self.rows[key] = float(value)

    def get(self, dataset: str, task: str, method: str, horizon: int) -> float:
        return self.rows[(dataset, task, method, int(horizon))]

    def __len__(self) -> int:
        return len(self.rows)

    def records(self) -> list[dict]:
        return [dict(zip(self.COLUMNS, (*k, v))) for k, v in sorted(self.rows.items())]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records():
                w.writerow([r["dataset"], r["task"], r["method"], r["horizon"], repr(r["cumulative_mse"])])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.records(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_json(cls, path: str | Path) -> "MetricsTable":
        table = cls()
        for r in json.loads(Path(path).read_text()):
            table.add(r["dataset"], r["task"], r["method"], r["horizon"], r["cumulative_mse"])
        return table

    def format(self) -> str:
        lines = ["  ".join(f"{c:>14}" for c in self.COLUMNS)]
        for r in self.records():
            lines.append("  ".join(f"{str(r[c]):>14}" for c in self.COLUMNS[:-1]) + f"  {r['cumulative_mse']:>14.6f}")
        return "\n".join(lines)


# -- resources -----------------------------------------------------------------

@dataclass
class ResourceTrace:
    step_times: np.ndarray
    total_runtime: float
    peak_memory_mb: float

    def __post_init__(self):
        self.step_times = np.asarray(self.step_times, dtype=np.float64)
        if (self.step_times < 0).any() or self.total_runtime < 0:
            raise ValueError("times must be non-negative")

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.step_times)

    @property
    def mean_step_time(self) -> float:
        return float(self.step_times.mean()) if self.step_times.size else 0.0

    def to_dict(self) -> dict:
        return {
            "n_steps": int(self.step_times.size),
            "total_runtime_s": self.total_runtime,
            "step_time_sum_s": float(self.step_times.sum()),
            "mean_step_time_s": self.mean_step_time,
            "max_step_time_s": float(self.step_times.max()) if self.step_times.size else 0.0,
            "peak_memory_mb": self.peak_memory_mb,
            "memory_note": "process resident set size; approximate",
        }


def measure_resources(step_fn: Callable[[int], object], n_steps: int = 1) -> ResourceTrace:
    """Time ``step_fn(i)`` for ``i < n_steps`` on the monotonic clock."""
    times = np.zeros(n_steps)
    peak = _memory_mb()
    start = time.perf_counter()
    for i in range(n_steps):
        t0 = time.perf_counter()
        step_fn(i)
        times[i] = time.perf_counter() - t0
    total = time.perf_counter() - start
    return ResourceTrace(times, total, max(peak, _memory_mb()))


def resources_of(report: StreamReport) -> ResourceTrace:
    return ResourceTrace([s.wall_time for s in report.steps], report.total_runtime, report.peak_memory_mb)


# -- svg -------------------------------------------------------------------------

_W, _H, _PAD = 900, 320, 40


def _downsample(n: int, limit: int = 2000) -> np.ndarray:
    return np.arange(0, n, max(1, math.ceil(n / limit)))


def _svg_plot(series: list[tuple[str, np.ndarray]], title: str, markers: Iterable[int] = ()) -> str:
    n = max((s.size for _, s in series), default=0)
    finite = np.concatenate([s[np.isfinite(s)] for _, s in series]) if series else np.zeros(0)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5

    def sx(i):
        return _PAD + (_W - 2 * _PAD) * (i / max(n - 1, 1))

    def sy(v):
        return _H - _PAD - (_H - 2 * _PAD) * ((v - lo) / (hi - lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_PAD}" y="20" font-family="monospace" font-size="13">{title}</text>',
           f'<text x="4" y="{_PAD + 4}" font-family="monospace" font-size="10">{hi:.4g}</text>',
           f'<text x="4" y="{_H - _PAD}" font-family="monospace" font-size="10">{lo:.4g}</text>']
    for m in markers:
        x = sx(m)
        out.append(f'<line x1="{x:.2f}" y1="{_PAD}" x2="{x:.2f}" y2="{_H - _PAD}" stroke="red" stroke-width="0.8"/>')
    colors = ("black", "#1f77b4", "#ff7f0e", "#2ca02c")
    for k, (label, s) in enumerate(series):
        pts = " ".join(f"{sx(i):.2f},{sy(s[i]):.2f}" for i in _downsample(s.size) if np.isfinite(s[i]))
        c = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1" points="{pts}"/>')
        out.append(f'<text x="{_W - 200}" y="{20 + 14 * k}" font-family="monospace" font-size="11" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def predictions_svg(report: StreamReport) -> str:
    truth = np.array([s.truth[0, 0] for s in report.steps])
    pred = np.array([s.prediction[0, 0] for s in report.steps])
    flags = [i for i, s in enumerate(report.steps) if s.drift_flag]
    return _svg_plot([("truth", truth), ("prediction", pred)], "prediction vs truth (first target, offset 1)", flags)


def loss_svg(report: StreamReport, window: int = 500) -> str:
    series = [(f"rolling MSE ({window})", rolling_mse_trace(report, window))]
    loss = np.array([s.loss for s in report.steps])
    if np.isfinite(loss).any():
        series.append(("update loss", loss))
    return _svg_plot(series, "loss trace")


# -- run directory -------------------------------------------------------------

def _flat(a: np.ndarray) -> str:
    return ";".join(repr(float(v)) for v in np.asarray(a).reshape(-1))


def write_trace_csv(report: StreamReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "y_hat", "y", "mse", "kl", "l1", "drift_flag", "wall_ms"])
        for s in report.steps:
            w.writerow([s.index, _flat(s.prediction), _flat(s.truth), repr(s.mse), repr(s.kl), repr(s.l1),
                        int(s.drift_flag), f"{1000 * s.wall_time:.3f}"])


def read_trace_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "j": int(r["j"]),
                "y_hat": np.array([float(v) for v in r["y_hat"].split(";")]),
                "y": np.array([float(v) for v in r["y"].split(";")]),
                "mse": float(r["mse"]), "kl": float(r["kl"]), "l1": float(r["l1"]),
                "drift_flag": bool(int(r["drift_flag"])), "wall_ms": float(r["wall_ms"]),
            })
    return rows


def summary_dict(report: StreamReport, checkpoint_sha256: str | None = None, extra: dict | None = None) -> dict:
    """Deterministic run summary: no timing, no memory figures."""
    scored = report.mse_trace()
    flags = [s.index for s in report.steps if s.drift_flag]
    out = {
        "version": SUMMARY_VERSION,
        "config": report.config,
        "checkpoint_sha256": checkpoint_sha256,
        "n_steps": len(report.steps),
        "n_scored": int(scored.size),
        "n_skipped": len(report.skipped),
        "cumulative_mse": float(scored.mean()) if scored.size else None,
        "drift": None if report.drift is None else {**report.drift, "n_flags": len(flags), "flag_steps": flags},
    }
    if extra:
        out.update(extra)
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def emit_outputs(report: StreamReport, out_dir: str | Path, *, table: MetricsTable | None = None,
                 checkpoint_sha256: str | None = None, extra: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    paths = {name: out / name for name in
             ("summary.json", "trace.csv", "predictions.svg", "loss.svg", "resources.json")}
    dump_json(summary_dict(report, checkpoint_sha256, extra), paths["summary.json"])
    write_trace_csv(report, paths["trace.csv"])
    paths["predictions.svg"].write_text(predictions_svg(report))
    paths["loss.svg"].write_text(loss_svg(report))
    dump_json(resources_of(report).to_dict(), paths["resources.json"])
    if table is not None:
        paths["metrics.csv"], paths["metrics.json"] = out / "metrics.csv", out / "metrics.json"
        table.write_csv(paths["metrics.csv"])
        table.write_json(paths["metrics.json"])
    return paths


def load_report(run_dir: str | Path) -> StreamReport:
    """Rebuild a report (steps and drift flags, no timing) from a run directory."""
    run = Path(run_dir)
    summary = load_summary(run)
    horizon = int(summary["config"]["horizon"])
    steps = [StreamStep(index=r["j"], prediction=r["y_hat"].reshape(horizon, -1), truth=r["y"].reshape(horizon, -1),
                        mse=r["mse"], kl=r["kl"], l1=r["l1"], wall_time=r["wall_ms"] / 1000.0,
                        drift_flag=r["drift_flag"]) for r in read_trace_csv(run / "trace.csv")]
    return StreamReport(steps=steps, config=summary["config"], drift=summary.get("drift"))


def load_summary(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    return json.loads(p.read_text())
