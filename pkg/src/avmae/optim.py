"""Adam with decoupled weight decay, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor


@dataclass
class AdamHyper:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001


# Parameter name leaves that never receive weight decay.
_NO_DECAY_LEAVES = ("bias", "gamma", "beta")


def decays(name: str) -> bool:
    return name.rsplit(".", 1)[-1] not in _NO_DECAY_LEAVES


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter."""

    hyper: AdamHyper = field(default_factory=AdamHyper)
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    """Bias-corrected Adam over a named parameter map.

    Weight decay is decoupled (param -= lr * wd * param) and skipped for
    bias and norm parameters.
    """

    def __init__(self, params: dict[str, Tensor], hyper: AdamHyper | None = None):
        self.params = params
        self.state = AdamState(hyper=hyper or AdamHyper())
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float | None = None) -> None:
        hp = self.state.hyper
        if lr is None:
            lr = hp.lr
        self.state.step += 1
        t = self.state.step
        c1 = 1.0 - hp.beta1**t
        c2 = 1.0 - hp.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            m = self.state.m[name]
            v = self.state.v[name]
            m *= hp.beta1
            m += (1.0 - hp.beta1) * g
            v *= hp.beta2
            v += (1.0 - hp.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + hp.eps)
            if hp.weight_decay != 0.0 and decays(name):
                update = update + hp.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def cosine_lr(
    step: int, total_steps: int, base_lr: float, warmup_steps: int = 0
) -> float:
    """Linear warmup to `base_lr`, then cosine annealing to zero."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
