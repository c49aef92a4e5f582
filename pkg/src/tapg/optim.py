"""Adam with a step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.name = name


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.1
    decay_every: int = 10
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def effective_lr(self) -> float:
        return self.lr * self.decay_factor ** (self.epoch // self.decay_every)


def adam_step(params: dict[str, Tensor], state: OptimState, grads: dict | None = None) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero. Every gradient is checked for NaN/Inf before any
    parameter is touched.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    checked = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        checked[name] = g

    state.step += 1
    t = state.step
    lr = state.effective_lr
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = checked[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
        state.m[name] = m.astype(p.data.dtype)
        state.v[name] = v.astype(p.data.dtype)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, decay_factor=0.1, decay_every=10,
                 betas=(0.9, 0.999), eps=1e-8):
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                decay_factor=decay_factor, decay_every=decay_every)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch

    @property
    def lr(self) -> float:
        return self.state.effective_lr
