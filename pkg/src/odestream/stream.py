"""Buffer-free prequential streaming: predict, reveal the truth, update once.

Rows are consumed one at a time from the dataset.  The loop keeps only the
last ``lag`` rows (the look-back window) and, for horizons above one, the
steps still waiting for their truth (at most ``horizon`` of them).  A step's
update runs as soon as its last truth row arrives, so for ``horizon = H`` the
update lags the prediction by ``H - 1`` rows.
"""

from __future__ import annotations

import hashlib
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import TimeSeriesDataset, time_grid
from .errors import ContractError, DataError
from .model import OdeStreamModel, OnlineState
from .training import LossBreakdown, composite_loss, masked_mse_loss, mse_loss

try:
    import psutil
except ImportError:  # pragma: no cover
    psutil = None


@dataclass
class StreamStep:
    index: int                  # stream row of the window's last observation
    prediction: np.ndarray      # (horizon, n_targets), emitted before the truth was seen
    truth: np.ndarray           # same shape; NaN where unobserved
    mse: float                  # NaN when no truth entry was observed
    kl: float = 0.0
    l1: float = 0.0
    loss: float = math.nan      # total update loss; NaN when no update ran
    wall_time: float = 0.0
    drift_flag: bool = False
    pred_hash: str = ""
    n_rows: int = 0

    @property
    def scored(self) -> bool:
        return math.isfinite(self.mse)


@dataclass
class Instrumentation:
    visit_counts: np.ndarray
    events: list[tuple[str, int, str]] = field(default_factory=list)
    retained_sizes: list[int] = field(default_factory=list)


@dataclass
class StreamReport:
    steps: list[StreamStep]
    config: dict = field(default_factory=dict)
    total_runtime: float = 0.0
    peak_memory_mb: float = 0.0
    skipped: list[int] = field(default_factory=list)
    drift: dict | None = None
    instrumentation: Instrumentation | None = None

    def mse_trace(self) -> np.ndarray:
        return np.array([s.mse for s in self.steps if s.scored])

    @property
    def cumulative_mse(self) -> float:
        trace = self.mse_trace()
        if trace.size == 0:
            raise DataError("report has no scored steps")
        return float(trace.mean())

    def __len__(self) -> int:
        return len(self.steps)


def prediction_hash(y_hat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(y_hat, dtype=np.float64).tobytes()).hexdigest()[:16]


# -- learners ------------------------------------------------------------------

class OdeStreamLearner:
    """Wraps a warm-started model with its online state and optimizer.

    Predictions decode from the posterior mean; each update draws one
    reparameterised latent sample from a seeded generator.
    """

    def __init__(self, model: OdeStreamModel, seed: int = 0, *, learn: bool = True,
                 kl_enabled: bool = True, l1_enabled: bool = True, lr: float = 1e-3):
        self.model = model
        self.learn = learn
        self.kl_enabled, self.l1_enabled = kl_enabled, l1_enabled
        self.state = OnlineState.zeros(model.config.hidden_dim)
        self.rng = np.random.default_rng(seed)
        self.params = list(model.online_parameters().values())
        self.opt = ad.Adam(self.params, lr=lr) if learn else None
        self.allow_partial = False
        self.n_updates = 0

    @property
    def horizon(self) -> int:
        return self.model.config.horizon

    def predict(self, x: np.ndarray, grid: np.ndarray):
        state_in = self.state
        out = self.model.forecast(x, grid, state_in, allow_partial=self.allow_partial)
        self.state = out.state
        return out.y_hat.data.reshape(self.horizon, -1).copy(), state_in

    def update(self, token: OnlineState, x: np.ndarray, grid: np.ndarray, truth: np.ndarray,
               observed: np.ndarray) -> LossBreakdown | None:
        if not self.learn or not observed.any():
            return None
        eps = self.rng.standard_normal(self.model.config.latent_dim)
        self.opt.zero_grad()
        with ad.Tape() as tape:
            out = self.model.forecast(x, grid, token, eps=eps, allow_partial=self.allow_partial)
            if observed.all():
                mse = mse_loss(out.y_hat, truth.reshape(-1))
            else:
                mse = masked_mse_loss(out.y_hat, truth.reshape(-1), observed.reshape(-1))
            total, parts = composite_loss(mse, out.dist, out.z0,
                                          kl_enabled=self.kl_enabled, l1_enabled=self.l1_enabled)
            tape.backward(total)
        self.opt.step()
        self.n_updates += 1
        return parts

    def retained_size(self) -> int:
        n = sum(p.size for p in self.model.parameters().values()) + self.state.size
        if self.opt is not None:
            n += sum(m.size + v.size for m, v in zip(self.opt.state.first_moment, self.opt.state.second_moment))
        return n


class PersistenceLearner:
    """Repeats the last observed target value across the horizon; never learns."""

    def __init__(self, target_columns, horizon: int):
        self.targets = list(target_columns)
        self.horizon = horizon
        self.allow_partial = False

    def predict(self, x: np.ndarray, grid: np.ndarray):
        last = x[-1, self.targets]
        return np.tile(last, (self.horizon, 1)), None

    def update(self, token, x, grid, truth, observed):
        return None

    def retained_size(self) -> int:
        return 0


# -- the loop ------------------------------------------------------------------

@dataclass
class _Pending:
    step: StreamStep
    x: np.ndarray
    grid: np.ndarray
    token: object
    truth_rows: list = field(default_factory=list)
    mask_rows: list = field(default_factory=list)


def _stack_context(ds: TimeSeriesDataset, context: TimeSeriesDataset | None):
    values, stamps, mask = ds.values, ds.timestamps, ds.observed
    if context is None or len(context) == 0:
        return values, stamps, mask, 0
    if context.n_features != ds.n_features:
        raise DataError("context rows have a different number of features than the stream")
    if len(ds) and context.timestamps[-1] >= ds.timestamps[0]:
        raise DataError("context rows must precede the stream chronologically")
    return (np.vstack([context.values, values]), np.concatenate([context.timestamps, stamps]),
            np.vstack([context.observed, mask]), len(context))


def _memory_mb() -> float:
    if psutil is None:
        return 0.0
    return psutil.Process().memory_info().rss / 2**20


def _run(learner, ds: TimeSeriesDataset, lag: int, horizon: int, *, context=None,
         irregular: bool = False, instrument: bool = False, config: dict | None = None) -> StreamReport:
    values, stamps, mask, offset = _stack_context(ds, context)
    n = values.shape[0]
    targets = list(ds.target_columns)
    first, last = lag - 1, n - 1 - horizon
    if last < first:
        raise DataError(f"stream of {len(ds)} rows (+{offset} context) is shorter than lag + horizon = {lag + horizon}")

    inst = Instrumentation(np.zeros(n, dtype=np.int64)) if instrument else None
    report = StreamReport(steps=[], config=dict(config or {}), instrumentation=inst)
    buf: deque = deque(maxlen=lag)
    pending: deque[_Pending] = deque()
    peak = _memory_mb()
    start = time.perf_counter()

    for k in range(n):
        row, row_mask, ts = values[k], mask[k], stamps[k]
        if inst is not None:
            inst.visit_counts[k] += 1

        for p in pending:
            if len(p.truth_rows) < horizon:
                p.truth_rows.append(row[targets])
                p.mask_rows.append(row_mask[targets])
        while pending and len(pending[0].truth_rows) == horizon:
            p = pending.popleft()
            t0 = time.perf_counter()
            observed = np.array(p.mask_rows)
            truth = np.where(observed, np.array(p.truth_rows), np.nan)
            step = p.step
            step.truth = truth
            if observed.any():
                err = (step.prediction - np.where(observed, truth, 0.0))[observed]
                step.mse = float(np.mean(err * err))
            if inst is not None:
                inst.events.append(("truth", step.index, step.pred_hash))
            parts = learner.update(p.token, p.x, p.grid, truth, observed)
            if parts is not None:
                step.kl, step.l1, step.loss = parts.kl, parts.l1, parts.total
            step.wall_time += time.perf_counter() - t0
            report.steps.append(step)

        buf.append((ts, row, row_mask))
        if k < first or k > last:
            continue
        t0 = time.perf_counter()
        j = k - offset
        if irregular:
            kept = [r for r in buf if r[2].any()]
            if len(kept) < 2:
                report.skipped.append(j)
                continue
            x = np.array([np.where(r[2], r[1], 0.0) for r in kept])
        else:
            kept = buf
            x = np.array([r[1] for r in kept])
        grid = time_grid(np.array([r[0] for r in kept]))
        y_hat, token = learner.predict(x, grid)
        step = StreamStep(index=j, prediction=y_hat, truth=np.full_like(y_hat, np.nan), mse=math.nan,
                          pred_hash=prediction_hash(y_hat), n_rows=len(kept))
        if inst is not None:
            inst.events.append(("predict", j, step.pred_hash))
        step.wall_time = time.perf_counter() - t0
        pending.append(_Pending(step, x, grid, token))
        if inst is not None:
            held = sum(r[1].size + r[2].size + 1 for r in buf)
            held += sum(p.x.size + p.grid.size + horizon * 2 * len(targets) for p in pending)
            inst.retained_sizes.append(learner.retained_size() + held)
        if k % 256 == 0:
            peak = max(peak, _memory_mb())

    report.total_runtime = time.perf_counter() - start
    report.peak_memory_mb = max(peak, _memory_mb())
    return report


def _echo(model: OdeStreamModel | None, horizon: int, seed: int, **extra) -> dict:
    cfg = {"horizon": horizon, "seed": seed, **extra}
    if model is not None:
        cfg["model"] = model.config.to_dict()
    return cfg


def _check_horizon(model: OdeStreamModel, horizon: int) -> None:
    if horizon != model.config.horizon:
        raise ContractError(f"model was built for horizon {model.config.horizon}, not {horizon}")


def run_stream(model: OdeStreamModel, stream: TimeSeriesDataset, horizon: int = 1, seed: int = 0, *,
               context: TimeSeriesDataset | None = None, learn: bool = True, kl_enabled: bool = True,
               l1_enabled: bool = True, lr: float = 1e-3, instrument: bool = False) -> StreamReport:
    """Prequential online run over a fully observed, normalised stream.

    ``context`` rows (typically the last ``lag - 1`` training rows) seed the
    first window so no stream prefix is lost.  ``learn=False`` gives the
    frozen warm-started model.
    """
    _check_horizon(model, horizon)
    if stream.mask is not None and not stream.mask.all():
        raise ContractError("stream has unobserved entries; use run_stream_irregular")
    learner = OdeStreamLearner(model, seed, learn=learn, kl_enabled=kl_enabled, l1_enabled=l1_enabled, lr=lr)
    return _run(learner, stream, model.config.lag, horizon, context=context, instrument=instrument,
                config=_echo(model, horizon, seed, learn=learn, kl_enabled=kl_enabled, l1_enabled=l1_enabled,
                             lr=lr, irregular=False))


def run_stream_irregular(model: OdeStreamModel, stream: TimeSeriesDataset, horizon: int = 1, seed: int = 0, *,
                         context: TimeSeriesDataset | None = None, learn: bool = True, kl_enabled: bool = True,
                         l1_enabled: bool = True, lr: float = 1e-3, instrument: bool = False) -> StreamReport:
    """Online run over a stream with an observation mask.

    Each window keeps only rows where at least one attribute is observed,
    paired with their real timestamps on the ODE grid.  Unobserved cells of a
    kept row enter the network as 0 (the training mean); the loss and the
    score use observed truth entries only.  Windows with fewer than two
    observed rows are skipped and listed in ``report.skipped``.
    """
    _check_horizon(model, horizon)
    learner = OdeStreamLearner(model, seed, learn=learn, kl_enabled=kl_enabled, l1_enabled=l1_enabled, lr=lr)
    learner.allow_partial = True
    return _run(learner, stream, model.config.lag, horizon, context=context, irregular=True,
                instrument=instrument,
                config=_echo(model, horizon, seed, learn=learn, kl_enabled=kl_enabled, l1_enabled=l1_enabled,
                             lr=lr, irregular=True))


def run_naive_baseline(stream: TimeSeriesDataset, horizon: int = 1, lag: int = 24, *,
                       context: TimeSeriesDataset | None = None, instrument: bool = False) -> StreamReport:
    """Persistence forecast ``y_hat[j + h] = y[j]`` scored like the main loop."""
    if stream.mask is not None and not stream.mask.all():
        raise ContractError("persistence baseline expects a fully observed stream")
    learner = PersistenceLearner(stream.target_columns, horizon)
    return _run(learner, stream, lag, horizon, context=context, instrument=instrument,
                config=_echo(None, horizon, 0, method="persistence", lag=lag))
