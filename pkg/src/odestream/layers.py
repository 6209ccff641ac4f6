"""Dense layers and recurrent cells built on the autodiff kernel.

Every layer owns its parameters as named :class:`Tensor` objects and exposes
them through ``parameters()`` so a model can assemble a flat registry.
Inputs may be a single vector (n,) or a batch (B, n).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


def uniform_init(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != width:
        raise DimensionError(f"{what}: expected last dimension {width}, got shape {x.shape}")


def _rows(x: Tensor) -> int | None:
    return x.data.shape[0] if x.data.ndim == 2 else None


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 name: str = "linear"):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        self.in_dim, self.out_dim, self.name = in_dim, out_dim, name
        w = uniform_init(rng, (out_dim, in_dim), in_dim) if rng is not None else np.zeros((out_dim, in_dim))
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        _check_width(x, self.in_dim, self.name)
        return ad.linear(x, self.weight, self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


def linear_apply(layer: Linear, x: Tensor) -> Tensor:
    return layer(x)


class GruCell:
    """Single-layer GRU cell.

    Each gate has one weight matrix over the concatenation ``[x; h]`` and one
    bias, so the parameter count is ``3 * (in + hid + 1) * hid``.  The reset
    gate scales the previous state before the candidate projection::

        u = sigmoid(W_u [x; h] + b_u)
        r = sigmoid(W_r [x; h] + b_r)
        n = tanh(W_n [x; r*h] + b_n)
        h' = (1 - u) * n + u * h
    """

    def __init__(self, input_dim: int, hidden_dim: int = 64, rng: np.random.Generator | None = None,
                 name: str = "gru"):
        self.input_dim, self.hidden_dim, self.name = input_dim, hidden_dim, name
        width = input_dim + hidden_dim
        self.update = Linear(width, hidden_dim, rng, f"{name}.update")
        self.reset = Linear(width, hidden_dim, rng, f"{name}.reset")
        self.candidate = Linear(width, hidden_dim, rng, f"{name}.candidate")
        n_params = sum(p.size for p in self.parameters().values())
        assert n_params == 3 * (input_dim + hidden_dim + 1) * hidden_dim

    def __call__(self, x: Tensor, h_prev: Tensor) -> Tensor:
        _check_width(x, self.input_dim, self.name)
        _check_width(h_prev, self.hidden_dim, self.name)
        if _rows(x) != _rows(h_prev):
            raise DimensionError(f"{self.name}: batch of x {x.shape} and h {h_prev.shape} differ")
        xh = ad.concat((x, h_prev))
        u = ad.sigmoid(self.update(xh))
        r = ad.sigmoid(self.reset(xh))
        n = ad.tanh(self.candidate(ad.concat((x, r * h_prev))))
        # (1-u)*n + u*h rewritten with fewer tape nodes
        return n + u * (h_prev - n)

    def zero_state(self, batch: int | None = None) -> Tensor:
        return Tensor(np.zeros(self.hidden_dim if batch is None else (batch, self.hidden_dim)))

    def parameters(self) -> dict[str, Tensor]:
        return {**self.update.parameters(), **self.reset.parameters(), **self.candidate.parameters()}


def gru_step(cell: GruCell, x: Tensor, h_prev: Tensor) -> Tensor:
    return cell(x, h_prev)


class LstmCell:
    """Single-layer LSTM cell with input, forget, output and candidate gates.

    No forget-gate bias offset is applied; biases start at zero.
    """

    def __init__(self, input_dim: int, hidden_dim: int = 64, rng: np.random.Generator | None = None,
                 name: str = "lstm"):
        self.input_dim, self.hidden_dim, self.name = input_dim, hidden_dim, name
        width = input_dim + hidden_dim
        self.input_gate = Linear(width, hidden_dim, rng, f"{name}.input")
        self.forget_gate = Linear(width, hidden_dim, rng, f"{name}.forget")
        self.output_gate = Linear(width, hidden_dim, rng, f"{name}.output")
        self.candidate = Linear(width, hidden_dim, rng, f"{name}.candidate")
        n_params = sum(p.size for p in self.parameters().values())
        assert n_params == 4 * (input_dim + hidden_dim + 1) * hidden_dim

    def __call__(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        _check_width(x, self.input_dim, self.name)
        _check_width(h_prev, self.hidden_dim, self.name)
        _check_width(c_prev, self.hidden_dim, self.name)
        if not (_rows(x) == _rows(h_prev) == _rows(c_prev)):
            raise DimensionError(f"{self.name}: batch sizes of x, h, c differ")
        xh = ad.concat((x, h_prev))
        i = ad.sigmoid(self.input_gate(xh))
        f = ad.sigmoid(self.forget_gate(xh))
        o = ad.sigmoid(self.output_gate(xh))
        g = ad.tanh(self.candidate(xh))
        c = f * c_prev + i * g
        h = o * ad.tanh(c)
        return h, c

    def zero_state(self, batch: int | None = None) -> tuple[Tensor, Tensor]:
        shape = self.hidden_dim if batch is None else (batch, self.hidden_dim)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))

    def parameters(self) -> dict[str, Tensor]:
        return {
            **self.input_gate.parameters(), **self.forget_gate.parameters(),
            **self.output_gate.parameters(), **self.candidate.parameters(),
        }


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    return cell(x, h_prev, c_prev)


class DynamicsNet:
    """Time-aware vector field ``dz/dt = f(z, t)``.

    Two dense layers ``(latent + 1) -> width -> latent`` with tanh between;
    the time value is appended to ``z`` as a raw extra feature.
    """

    def __init__(self, latent_dim: int, width: int = 64, rng: np.random.Generator | None = None,
                 name: str = "dynamics"):
        self.latent_dim, self.name = latent_dim, name
        self.hidden = Linear(latent_dim + 1, width, rng, f"{name}.hidden")
        self.out = Linear(width, latent_dim, rng, f"{name}.out")

    def __call__(self, z: Tensor, t: float) -> Tensor:
        _check_width(z, self.latent_dim, self.name)
        rows = _rows(z)
        t_col = Tensor(np.full(1 if rows is None else (rows, 1), float(t)))
        return self.out(ad.tanh(self.hidden(ad.concat((z, t_col)))))

    def parameters(self) -> dict[str, Tensor]:
        return {**self.hidden.parameters(), **self.out.parameters()}


def dynamics_eval(net: DynamicsNet, z: Tensor, t: float) -> Tensor:
    return net(z, t)
