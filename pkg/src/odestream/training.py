"""Loss functions and the warm-up (VAE reconstruction) trainer."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, DimensionError
from .model import LatentDistribution, OdeStreamModel, reparameterize

L1_WEIGHT = 0.01


@dataclass
class LossBreakdown:
    """Loss components; ``total == data_term + kl + l1``.

    Online, ``data_term`` is the prediction MSE itself.  In warm-up it is the
    reconstruction error summed over each window's elements, while ``mse``
    reports the per-element mean.
    """

    mse: float
    kl: float
    l1: float
    total: float
    data_term: float | None = None

    def __post_init__(self):
        if self.data_term is None:
            self.data_term = self.mse


@dataclass
class WarmupConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    validation_fraction: float = 0.1
    kl_enabled: bool = True
    l1_enabled: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


def mse_loss(pred: Tensor, truth) -> Tensor:
    t = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != t.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs truth {t.shape}")
    return ad.mean(ad.square(pred - t))


def masked_mse_loss(pred: Tensor, truth: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over the entries where ``mask`` is true."""
    m = np.asarray(mask, dtype=np.float64)
    if pred.shape != m.shape or pred.shape != np.shape(truth):
        raise DimensionError("masked_mse_loss: prediction, truth and mask shapes differ")
    n = m.sum()
    diff = pred - Tensor(np.where(m > 0, truth, 0.0))
    return ad.affine(ad.sum_(ad.square(diff * Tensor(m))), 1.0 / n)


def kl_loss(dist: LatentDistribution) -> Tensor:
    """KL(q || N(0, I)) in log-variance form, summed over latent dims.

    For a batch of posteriors the per-sample sums are averaged.
    """
    mu, logvar = dist.mu, dist.logvar
    terms = ad.affine(logvar, 1.0, 1.0) - ad.square(mu) - ad.exp(logvar)
    total = ad.affine(ad.sum_(terms), -0.5)
    rows = mu.shape[0] if mu.data.ndim == 2 else 1
    return total if rows == 1 else ad.affine(total, 1.0 / rows)


def l1_loss(z: Tensor) -> Tensor:
    """``0.01 * sum |z|`` over the latent code (batch-averaged when batched)."""
    rows = z.shape[0] if z.data.ndim == 2 else 1
    return ad.affine(ad.sum_(ad.abs_(z)), L1_WEIGHT / rows)


def composite_loss(data_term: Tensor, dist: LatentDistribution, z0: Tensor, *,
                   kl_enabled: bool = True, l1_enabled: bool = True) -> tuple[Tensor, LossBreakdown]:
    """``data_term + kl + l1`` with unit weights; disabled terms are omitted from the graph."""
    total = data_term
    kl_val = l1_val = 0.0
    if kl_enabled:
        kl = kl_loss(dist)
        total = total + kl
        kl_val = kl.item()
    if l1_enabled:
        l1 = l1_loss(z0)
        total = total + l1
        l1_val = l1.item()
    return total, LossBreakdown(data_term.item(), kl_val, l1_val, total.item())


# -- warm-up -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    mse: float
    kl: float
    l1: float


@dataclass
class WarmupResult:
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    best_val_mse: float = math.inf

    @property
    def epochs_run(self) -> int:
        return len(self.log)

    def best_so_far(self) -> list[float]:
        return list(np.minimum.accumulate([r.val_loss for r in self.log]))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "mse", "kl", "l1"])
            for r in self.log:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.mse), repr(r.kl), repr(r.l1)])


def regular_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)


def window_stack(values: np.ndarray, lag: int) -> np.ndarray:
    """All stride-1 windows of ``lag`` rows as an array (n_windows, lag, D)."""
    n = values.shape[0] - lag + 1
    if n < 1:
        raise DataError(f"series of {values.shape[0]} rows is shorter than lag {lag}")
    idx = np.arange(lag)[None, :] + np.arange(n)[:, None]
    return values[idx]


def reconstruction_loss(model: OdeStreamModel, batch: np.ndarray, eps: np.ndarray | None,
                        grid: np.ndarray, *, kl_enabled: bool = True,
                        l1_enabled: bool = True) -> tuple[Tensor, LossBreakdown]:
    """VAE objective on a batch of windows (B, lag, D): reconstruct every row.

    The reconstruction term is the squared error summed over a window's rows
    and features (Gaussian log-likelihood up to constants), averaged over the
    batch.  ``eps=None`` decodes from the posterior mean (used for validation).
    """
    dist, _ = model.encode(batch)
    z0 = dist.mu if eps is None else reparameterize(dist, eps)
    _, _, y_seq = model.decode_window(z0, grid)
    sq = None
    for i, y in enumerate(y_seq):
        term = ad.sum_(ad.square(y - Tensor(batch[:, i, :])))
        sq = term if sq is None else sq + term
    recon = ad.affine(sq, 1.0 / batch.shape[0])
    total, parts = composite_loss(recon, dist, z0, kl_enabled=kl_enabled, l1_enabled=l1_enabled)
    parts.mse = parts.data_term / (batch.shape[1] * batch.shape[2])
    return total, parts


def _split_rows(n_rows: int, lag: int, fraction: float) -> int:
    """Row index where the chronological validation tail starts (== n_rows: none)."""
    if fraction <= 0:
        return n_rows
    n_val = max(math.ceil(fraction * n_rows), lag)
    if n_rows - n_val < lag + 1:
        return n_rows
    return n_rows - n_val


def warmup_train(model: OdeStreamModel, train_values: np.ndarray, cfg: WarmupConfig | None = None,
                 seed: int = 0) -> WarmupResult:
    """Fit encoder, dynamics and decoder on the (normalised) historical prefix.

    Validation monitors the last ``validation_fraction`` of the rows.  When
    that tail is too short to hold a window, training windows double as the
    validation set.  The best-validation parameters are restored before
    returning.
    """
    cfg = cfg or WarmupConfig()
    values = np.asarray(train_values, dtype=np.float64)
    lag = model.config.lag
    if values.ndim != 2 or values.shape[1] != model.config.input_dim:
        raise DataError(f"training values shape {values.shape} does not match input_dim {model.config.input_dim}")
    if values.shape[0] < lag + 1:
        raise DataError(f"training split has {values.shape[0]} rows; need at least lag+1={lag + 1}")

    cut = _split_rows(values.shape[0], lag, cfg.validation_fraction)
    train_w = window_stack(values[:cut], lag)
    val_w = window_stack(values[cut:], lag) if cut < values.shape[0] else train_w
    grid = regular_grid(lag)
    rng = np.random.default_rng(seed)
    params = list(model.warmup_parameters().values())
    opt = ad.Adam(params, lr=cfg.lr)
    latent = model.config.latent_dim
    result = WarmupResult()
    best_state = model.state_dict()
    flags = dict(kl_enabled=cfg.kl_enabled, l1_enabled=cfg.l1_enabled)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_w))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            batch = train_w[order[start:start + cfg.batch_size]]
            eps = rng.standard_normal((len(batch), latent))
            opt.zero_grad()
            with ad.Tape() as tape:
                loss, parts = reconstruction_loss(model, batch, eps, grid, **flags)
                tape.backward(loss)
            opt.step()
            sums += len(batch) * np.array([parts.total, parts.mse, parts.kl, parts.l1])
        sums /= len(train_w)
        val = _evaluate(model, val_w, grid, cfg.batch_size, flags)
        result.log.append(EpochRecord(epoch, float(sums[0]), val.total, float(sums[1]), float(sums[2]), float(sums[3])))
        if val.total < result.best_val_loss:
            result.best_val_loss, result.best_val_mse, result.best_epoch = val.total, val.mse, epoch
            best_state = model.state_dict()
        elif epoch - result.best_epoch >= cfg.patience:
            break

    model.load_state_dict(best_state)
    return result


def _evaluate(model: OdeStreamModel, windows: np.ndarray, grid: np.ndarray, batch_size: int,
              flags: dict) -> LossBreakdown:
    acc = np.zeros(5)
    for start in range(0, len(windows), batch_size):
        batch = windows[start:start + batch_size]
        _, p = reconstruction_loss(model, batch, None, grid, **flags)
        acc += len(batch) * np.array([p.mse, p.kl, p.l1, p.total, p.data_term])
    acc /= len(windows)
    return LossBreakdown(*(float(v) for v in acc))


def reconstruction_mse(model: OdeStreamModel, values: np.ndarray, batch_size: int = 256) -> float:
    """Posterior-mean reconstruction MSE over every window of ``values``."""
    windows = window_stack(np.asarray(values, dtype=np.float64), model.config.lag)
    return _evaluate(model, windows, regular_grid(model.config.lag), batch_size,
                     dict(kl_enabled=False, l1_enabled=False)).mse
