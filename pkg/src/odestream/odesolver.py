"""Fixed-step forward Euler integration, differentiable by unrolling."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError

VectorField = Callable[[Tensor, float], Tensor]

DEFAULT_MAX_STEP = 0.05


def _validate_grid(grid: Sequence[float], max_step: float) -> np.ndarray:
    t = np.asarray(grid, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ContractError("time grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(t)):
        raise ContractError("time grid contains non-finite values")
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise ContractError("time grid must be strictly increasing")
    if not max_step > 0:
        raise ContractError(f"max_step must be positive, got {max_step}")
    return t


def _substeps(span: float, max_step: float) -> int:
    # guard against ceil(0.05/0.05) landing on 2 through rounding noise
    return max(1, math.ceil(span / max_step - 1e-9))


def step_count(grid: Sequence[float], max_step: float = DEFAULT_MAX_STEP) -> int:
    """Total Euler sub-steps :func:`integrate` takes over ``grid``."""
    t = _validate_grid(grid, max_step)
    return sum(_substeps(float(b - a), max_step) for a, b in zip(t[:-1], t[1:]))


def integrate(f: VectorField, z0: Tensor, grid: Sequence[float],
              max_step: float = DEFAULT_MAX_STEP) -> list[Tensor]:
    """Integrate ``dz/dt = f(z, t)`` from ``z0`` at ``grid[0]`` through every grid point.

    Each segment ``[t_i, t_{i+1}]`` is split into ``ceil(dt / max_step)``
    equal Euler sub-steps.  Returns one state per grid point, the first being
    ``z0`` itself.  All operations go on the active tape, if any.
    """
    t = _validate_grid(grid, max_step)
    if not np.all(np.isfinite(z0.data)):
        raise ContractError("initial state is not finite")
    z = z0
    trajectory = [z0]
    k = 0
    for a, b in zip(t[:-1], t[1:]):
        n = _substeps(float(b - a), max_step)
        h = float(b - a) / n
        for s in range(n):
            z = z + f(z, float(a) + s * h) * h
            k += 1
            if not np.all(np.isfinite(z.data)):
                raise NumericError(f"non-finite latent state at Euler sub-step {k}")
        trajectory.append(z)
    return trajectory
