"""Central finite-difference verification of analytic gradients.

Checks run at f64: finite differences at f32 lose too many digits to
distinguish a wrong gradient from roundoff.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_check(
    fn,
    inputs,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Compare analytic grads of scalar `fn(inputs)` against central differences.

    Returns the worst relative error max |analytic - numeric| / max(1, |analytic|)
    over the probed coordinates. When `max_coords` is given, a random subset of
    coordinates per input is probed (for big graphs); otherwise all of them.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("finite differences require f64 inputs")
        t.zero_grad()
    loss = fn()
    loss.backward()
    grads = [None if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, grad in zip(inputs, grads):
        if grad is None:
            continue
        n = t.data.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            flat_idx = rng.choice(n, size=max_coords, replace=False)
        else:
            flat_idx = np.arange(n)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in flat_idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, rel)
    return worst


def random_instances(shapes, seed: int, n: int, transform=None):
    """Yield `n` lists of f64 leaf tensors with entries ~ N(0,1)."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        inputs = []
        for shape in shapes:
            data = rng.standard_normal(shape)
            if transform is not None:
                data = transform(data)
            inputs.append(Tensor(data, requires_grad=True, dtype=np.float64))
        yield inputs
