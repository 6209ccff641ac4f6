"""The ODEStream network: GRU encoder, latent Gaussian, neural-ODE decoder,
temporal isolation layer (an LSTM over the recent window) and fusion head.

Windows are passed as numpy arrays: ``(rows, input_dim)`` for one window or
``(batch, rows, input_dim)`` for a warm-up batch.  Rows are fed to the
recurrent cells one time step at a time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import Tensor
from .errors import ConfigMismatchError, ContractError, DimensionError
from .layers import DynamicsNet, GruCell, Linear, LstmCell
from .odesolver import DEFAULT_MAX_STEP, integrate

CHECKPOINT_KIND = "odestream-model"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 64
    latent_dim: int = 64
    lag: int = 24
    horizon: int = 1
    target_dim: int = 1
    seed: int = 0
    til_enabled: bool = True
    dynamics_width: int = 64
    max_step: float = DEFAULT_MAX_STEP

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "latent_dim", "lag", "horizon", "target_dim", "dynamics_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    @property
    def output_dim(self) -> int:
        return self.target_dim * self.horizon

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LatentDistribution:
    mu: Tensor
    logvar: Tensor


@dataclass
class OnlineState:
    """Recurrent state of the temporal isolation layer carried between stream steps."""

    til_hidden: np.ndarray
    til_cell: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "OnlineState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))

    @property
    def size(self) -> int:
        return self.til_hidden.size + self.til_cell.size


class Forecast(NamedTuple):
    y_hat: Tensor
    dist: LatentDistribution
    z0: Tensor
    state: OnlineState


# Fixed per-component seed offsets: toggling the TIL must not change the
# initialisation of any other sub-network.
_COMPONENT_SEEDS = {
    "encoder.gru": 0, "encoder.proj": 1, "dynamics": 2, "latent_to_hidden": 3,
    "recon_head": 4, "til": 5, "concat_head": 6, "output_head": 7,
}


class OdeStreamModel:
    def __init__(self, config: ModelConfig):
        self.config = c = config

        def rng(component: str) -> np.random.Generator:
            return np.random.default_rng([c.seed, _COMPONENT_SEEDS[component]])

        self.encoder_rnn = GruCell(c.input_dim, c.hidden_dim, rng("encoder.gru"), "encoder.gru")
        self.encoder_proj = Linear(c.hidden_dim, 2 * c.latent_dim, rng("encoder.proj"), "encoder.proj")
        self.dynamics = DynamicsNet(c.latent_dim, c.dynamics_width, rng("dynamics"), "dynamics")
        self.latent_to_hidden = Linear(c.latent_dim, c.hidden_dim, rng("latent_to_hidden"), "latent_to_hidden")
        # reconstruction decoder used by warm-up only
        self.recon_head = Linear(c.hidden_dim, c.input_dim, rng("recon_head"), "recon_head")
        self.til = LstmCell(c.input_dim, c.hidden_dim, rng("til"), "til") if c.til_enabled else None
        fused = 2 * c.hidden_dim if c.til_enabled else c.hidden_dim
        self.concat_head = Linear(fused, c.hidden_dim, rng("concat_head"), "concat_head")
        self.output_head = Linear(c.hidden_dim, c.output_dim, rng("output_head"), "output_head")

    # -- registry --------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        reg: dict[str, Tensor] = {}
        for part in (self.encoder_rnn, self.encoder_proj, self.dynamics, self.latent_to_hidden,
                     self.recon_head, self.til, self.concat_head, self.output_head):
            if part is not None:
                reg.update(part.parameters())
        return reg

    def online_parameters(self) -> dict[str, Tensor]:
        """Parameters that the streaming loss reaches (everything but the reconstruction head)."""
        return {k: v for k, v in self.parameters().items() if not k.startswith("recon_head.")}

    def warmup_parameters(self) -> dict[str, Tensor]:
        prefixes = ("encoder.", "dynamics.", "latent_to_hidden.", "recon_head.")
        return {k: v for k, v in self.parameters().items() if k.startswith(prefixes)}

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        reg = self.parameters()
        if set(reg) != set(state):
            missing, extra = set(reg) - set(state), set(state) - set(reg)
            raise ConfigMismatchError(f"parameter names differ (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, p in reg.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigMismatchError(f"{name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- forward pieces --------------------------------------------------------

    def _rows(self, window, allow_partial: bool) -> list[Tensor]:
        w = window.data if isinstance(window, Tensor) else np.asarray(window, dtype=np.float64)
        if w.ndim not in (2, 3) or w.shape[-1] != self.config.input_dim:
            raise DimensionError(f"window shape {w.shape} incompatible with input_dim {self.config.input_dim}")
        n = w.shape[-2]
        if allow_partial:
            if not 1 <= n <= self.config.lag:
                raise ContractError(f"window has {n} rows; expected between 1 and lag={self.config.lag}")
        elif n != self.config.lag:
            raise ContractError(f"window has {n} rows; expected lag={self.config.lag}")
        return [Tensor(w[..., i, :]) for i in range(n)]

    def encode(self, window, *, allow_partial: bool = False) -> tuple[LatentDistribution, Tensor]:
        rows = self._rows(window, allow_partial)
        batch = rows[0].shape[0] if rows[0].data.ndim == 2 else None
        h = self.encoder_rnn.zero_state(batch)
        for x in rows:
            h = self.encoder_rnn(x, h)
        stats = self.encoder_proj(h)
        L = self.config.latent_dim
        return LatentDistribution(ad.slice_last(stats, 0, L), ad.slice_last(stats, L, 2 * L)), h

    def decode_window(self, z0: Tensor, grid: Sequence[float]) -> tuple[list[Tensor], list[Tensor], list[Tensor]]:
        traj = integrate(self.dynamics, z0, grid, self.config.max_step)
        h_seq = [self.latent_to_hidden(z) for z in traj]
        y_seq = [self.recon_head(h) for h in h_seq]
        return traj, h_seq, y_seq

    def latent_hidden(self, z0: Tensor, grid: Sequence[float]) -> Tensor:
        """Hidden representation of the final latent state ``z(t_last)``."""
        traj = integrate(self.dynamics, z0, grid, self.config.max_step)
        return self.latent_to_hidden(traj[-1])

    def til_forward(self, window, state: OnlineState, *,
                    allow_partial: bool = False) -> tuple[Tensor, OnlineState]:
        if self.til is None:
            raise ContractError("temporal isolation layer is disabled in this model")
        rows = self._rows(window, allow_partial)
        h, c = Tensor(state.til_hidden), Tensor(state.til_cell)
        for x in rows:
            h, c = self.til(x, h, c)
        return h, OnlineState(h.data.copy(), c.data.copy())

    def fuse_and_predict(self, h_j: Tensor, h_til: Tensor | None) -> Tensor:
        if self.til is not None:
            if h_til is None:
                raise ContractError("TIL representation required when the TIL is enabled")
            fused = ad.concat((h_til, h_j))
        else:
            fused = h_j
        return self.output_head(self.concat_head(fused))

    def forecast(self, window, grid: Sequence[float], state: OnlineState,
                 eps: np.ndarray | None = None, *, allow_partial: bool = False) -> Forecast:
        """Full online forward pass; ``eps=None`` uses the posterior mean as ``z0``."""
        dist, _ = self.encode(window, allow_partial=allow_partial)
        z0 = dist.mu if eps is None else reparameterize(dist, eps)
        h_j = self.latent_hidden(z0, grid)
        if self.til is not None:
            h_til, new_state = self.til_forward(window, state, allow_partial=allow_partial)
        else:
            h_til, new_state = None, state
        return Forecast(self.fuse_and_predict(h_j, h_til), dist, z0, new_state)


def reparameterize(dist: LatentDistribution, eps) -> Tensor:
    """``z0 = mu + eps * exp(0.5 * logvar)``."""
    e = eps if isinstance(eps, Tensor) else Tensor(eps)
    if e.shape != dist.mu.shape or dist.logvar.shape != dist.mu.shape:
        raise DimensionError(f"eps {e.shape} / mu {dist.mu.shape} / logvar {dist.logvar.shape} differ")
    return dist.mu + e * ad.exp(ad.affine(dist.logvar, 0.5))


# -- checkpoints ---------------------------------------------------------------

def checkpoint_save(model: OdeStreamModel, path: str | Path, metadata: dict | None = None) -> str:
    """Persist the parameter registry; returns the file's SHA-256."""
    header = {"kind": CHECKPOINT_KIND, "config": model.config.to_dict(), "metadata": metadata or {}}
    return container.write(path, header, model.state_dict())


def checkpoint_load(path: str | Path, expected: ModelConfig | dict | None = None) -> tuple[OdeStreamModel, dict]:
    """Load a checkpoint, optionally checking it against an expected configuration.

    ``expected`` may be a full :class:`ModelConfig` (every field except the
    seed must match) or a dict of only the fields to check.
    """
    header, arrays = container.read(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise ConfigMismatchError(f"{path} is not a model checkpoint (kind={header.get('kind')!r})")
    config = ModelConfig.from_dict(header["config"])
    if expected is not None:
        want = expected.to_dict() if isinstance(expected, ModelConfig) else dict(expected)
        if isinstance(expected, ModelConfig):
            want.pop("seed")
        have = config.to_dict()
        diffs = {k: (have.get(k), v) for k, v in want.items() if have.get(k) != v}
        if diffs:
            detail = ", ".join(f"{k}: checkpoint={a!r} expected={b!r}" for k, (a, b) in diffs.items())
            raise ConfigMismatchError(f"checkpoint config mismatch ({detail})")
    model = OdeStreamModel(config)
    model.load_state_dict(arrays)
    return model, header.get("metadata", {})
