"""Central finite-difference gradient checking for tests."""

import numpy as np

from odestream import autodiff as ad


def numeric_grad(loss_fn, tensor, h=1e-6, indices=None):
    """Central differences of ``loss_fn()`` w.r.t. ``tensor.data`` at ``indices`` (all by default)."""
    flat = tensor.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn().item()
        flat[i] = orig - h
        down = loss_fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


def analytic_grads(loss_fn, tensors):
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with ad.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check(loss_fn, tensors, rtol, atol=1e-8, max_entries=None, rng=None):
    """Return the worst ``|g - fd| / (atol + rtol |fd|)`` ratio over the checked entries (<= 1 passes)."""
    grads = analytic_grads(loss_fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        n = t.data.size
        if max_entries is not None and n > max_entries:
            indices = (rng or np.random.default_rng(0)).choice(n, size=max_entries, replace=False)
        else:
            indices = None
        with ad.no_grad():
            fd = numeric_grad(loss_fn, t, indices=indices)
        gf = g.reshape(-1)
        for i, v in fd.items():
            worst = max(worst, abs(gf[i] - v) / (atol + rtol * abs(v)))
    return worst
