"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import backward

# Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
# the floor keeps near-zero entries from dominating on roundoff alone.
REL_FLOOR = 1e-6


def numeric_grad(f, x, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x.data``.

    ``f`` rebuilds the forward pass from scratch on every call and returns a
    scalar Tensor. ``indices`` restricts the check to selected flat offsets.
    """
    flat = x.data.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def relative_errors(analytic, numeric, floor=REL_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(f, tensors, h=1e-5, max_entries=None, rng=None):
    """Compare analytic and numeric gradients; return the worst relative error.

    ``tensors`` are leaves of the graph built by ``f``. With ``max_entries``
    set, a random subset of entries per tensor is checked.
    """
    for t in tensors:
        t.grad = None
    backward(f())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat_a = analytic.reshape(-1)
        idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        num = numeric_grad(f, t, h=h, indices=idx)
        errs = relative_errors(flat_a[idx], [num[i] for i in idx])
        worst = max(worst, float(errs.max(initial=0.0)))
    return worst
