"""Rectified Adam and the step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class RAdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def rho_inf(self) -> float:
        return 2.0 / (1.0 - self.beta2) - 1.0

    def rho(self, t: int) -> float:
        b2t = self.beta2 ** t
        return self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

    def rectified(self, t: int) -> bool:
        """Whether step ``t`` uses the variance-rectified adaptive update."""
        return self.rho(t) > 4.0


def radam_step(params: dict, state: RAdamState, lr: float | None = None) -> bool:
    """Apply one RAdam update in place to every tensor in ``params`` with a grad.

    Returns True if the adaptive (rectified) branch was taken.
    Raises NonFiniteGradient without touching anything if any grad is not finite.
    """
    lr = state.lr if lr is None else lr
    active = [(name, p) for name, p in params.items() if p.grad is not None]
    for name, p in active:
        if p.grad.shape != p.shape:
            raise ValueError(f"grad shape {p.grad.shape} != param shape {p.shape} for {name}")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")

    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    rho_t = state.rho(t)
    adaptive = rho_t > 4.0
    if adaptive:
        r = math.sqrt((rho_t - 4) * (rho_t - 2) * state.rho_inf
                      / ((state.rho_inf - 4) * (state.rho_inf - 2) * rho_t))

    for name, p in active:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if adaptive:
            denom = np.sqrt(v / bias2)
            denom += state.eps
            p.data -= (lr * r / bias1) * m / denom
        else:
            p.data -= (lr / bias1) * m
    return adaptive


def lr_schedule(epoch: int, base_lr: float, step_epochs: int = 100, mode: str = "step") -> float:
    """Divide ``base_lr`` by ten every ``step_epochs`` epochs.

    ``mode="single"`` drops once after ``step_epochs``; ``"constant"`` never decays.
    """
    if mode == "constant":
        return base_lr
    drops = epoch // step_epochs
    if mode == "single":
        drops = min(drops, 1)
    elif mode != "step":
        raise ValueError(f"unknown schedule mode {mode!r}")
    return base_lr * 10.0 ** (-drops)
