"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .module import Parameter


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    leaves: Sequence[tuple[str, Parameter]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one Adam update in place, zero the grads and advance ``state.t``."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in leaves:
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"adam state for {name!r} has shape {m.shape}, leaf has {p.shape}")
        g = p.grad.astype(p.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.dtype, copy=False)
        p.zero_grad()


class Adam:
    """Adam over a fixed, named set of leaves."""

    def __init__(self, named_params, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float | None = None) -> None:
        adam_step(self.params, self.state, self.lr if lr is None else lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, _ in self.params:
            out[f"{prefix}.m.{name}"] = self.state.m[name]
            out[f"{prefix}.v.{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str, t: int) -> None:
        for name, p in self.params:
            m = arrays[f"{prefix}.m.{name}"]
            v = arrays[f"{prefix}.v.{name}"]
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"adam state for {name!r} does not match leaf shape {p.shape}")
            self.state.m[name] = m.astype(p.dtype)
            self.state.v[name] = v.astype(p.dtype)
        self.state.t = int(t)
