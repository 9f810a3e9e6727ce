"""AdamW with linear warmup to a constant peak learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def lr_schedule(t: int, warmup: int, peak: float) -> float:
    """Linear 0 -> peak over ``warmup`` steps, then constant."""
    if t < 0:
        raise ValueError("step must be >= 0")
    if warmup <= 0 or t >= warmup:
        return peak
    return peak * t / warmup


def decays(name: str) -> bool:
    """Weight decay applies to weight matrices and embeddings, not biases or layer norms."""
    return not (name.endswith(".bias") or name.endswith(".gain"))


@dataclass
class OptimizerState:
    peak_lr: float = 1e-4
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-4
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return lr_schedule(self.t, self.warmup_steps, self.peak_lr)

    def hyper(self) -> dict:
        return dict(peak_lr=self.peak_lr, warmup_steps=self.warmup_steps, beta1=self.beta1,
                    beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay, t=self.t)


def adamw_step(params: dict, grads: dict, state: OptimizerState, frozen=()) -> float:
    """One in-place AdamW update; returns the learning rate used.

    The step counter is advanced first, so the first update uses
    ``lr_schedule(1, ...)``.  Names in ``frozen`` are left untouched.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.t += 1
    lr = lr_schedule(state.t, state.warmup_steps, state.peak_lr)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay and decays(name):
            p *= p.dtype.type(1.0 - lr * state.weight_decay)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return lr
