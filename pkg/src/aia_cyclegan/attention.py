"""Factorized time/frequency self-attention and hierarchical aggregation.

An ATFA block attends along time (a ``T x T`` map) and along frequency (an
``F' x F'`` map) in parallel and mixes both back into the input through two
learnable scalars that start at zero. AHA pools the outputs of all ATFA
blocks into one softmax weight per block and adds the weighted sum to the
last block's output through a third zero-initialized scalar. The whole stack
is therefore an exact identity at initialization.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .layers import Conv2D, softmax
from .numerics import Module, Parameter, ShapeError, Tensor, concat, mean, stack, transpose


@dataclass
class ScoreAccounting:
    """Records every attention-score matrix allocated while active."""

    allocations: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    def entries_per_item(self, branches: Sequence[str] = ("time", "frequency")) -> int:
        return sum(int(np.prod(shape[1:])) for name, shape in self.allocations if name in branches)

    def largest_per_item(self) -> int:
        return max((int(np.prod(shape[1:])) for _, shape in self.allocations), default=0)


_ACCOUNTS: list[ScoreAccounting] = []


@contextlib.contextmanager
def score_accounting() -> Iterator[ScoreAccounting]:
    acct = ScoreAccounting()
    _ACCOUNTS.append(acct)
    try:
        yield acct
    finally:
        _ACCOUNTS.remove(acct)


def _record(branch: str, shape: tuple[int, ...]) -> None:
    for acct in _ACCOUNTS:
        acct.allocations.append((branch, shape))


def factorized_score_entries(t: int, f: int) -> int:
    return t * t + f * f


def full_score_entries(t: int, f: int) -> int:
    return (t * f) ** 2


def _one_by_one(cin: int, cout: int, rng: np.random.Generator) -> Conv2D:
    return Conv2D(cin, cout, kernel_size=(1, 1), stride=(1, 1), padding=(0, 0), rng=rng)


class ATFAModule(Module):
    """Time branch, frequency branch and the two residual mixing scalars."""

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator | None = None,
        use_atab: bool = True,
        use_afab: bool = True,
    ):
        if channels % 8:
            raise ShapeError(f"ATFA: channel count {channels} not divisible by 8")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.use_atab = use_atab
        self.use_afab = use_afab
        qk = channels // 8
        if use_atab:
            self.q_t = _one_by_one(channels, qk, rng)
            self.k_t = _one_by_one(channels, qk, rng)
            self.v_t = _one_by_one(channels, channels, rng)
            self.time_gain = Parameter(0.0)
        if use_afab:
            self.q_f = _one_by_one(channels, qk, rng)
            self.k_f = _one_by_one(channels, qk, rng)
            self.v_f = _one_by_one(channels, channels, rng)
            self.freq_gain = Parameter(0.0)

    def forward(self, x) -> Tensor:
        return atfa_forward(self, x)


def _check_input(module: ATFAModule, x: Tensor) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"attention: expected B x T x F x C input, got {x.shape}")
    B, T, F, C = x.shape
    if C % 8:
        raise ShapeError(f"attention: channel count {C} not divisible by 8")
    if C != module.channels:
        raise ShapeError(f"attention: input has {C} channels, module built for {module.channels}")
    return B, T, F, C


def _attend(q: Tensor, k: Tensor, v: Tensor, branch: str) -> tuple[Tensor, Tensor]:
    scores = q @ transpose(k, (0, 2, 1))
    _record(branch, scores.shape)
    weights = softmax(scores, axis=-1)
    return weights @ v, weights


def atab_forward(module: ATFAModule, x, return_attention: bool = False):
    """Self-attention across frames; each frame is one ``F' * C`` vector."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    B, T, F, C = _check_input(module, x)
    q = module.q_t(x).reshape(B, T, -1)
    k = module.k_t(x).reshape(B, T, -1)
    v = module.v_t(x).reshape(B, T, F * C)
    out, weights = _attend(q, k, v, "time")
    out = out.reshape(B, T, F, C)
    return (out, weights) if return_attention else out


def afab_forward(module: ATFAModule, x, return_attention: bool = False):
    """Self-attention across frequency bins; each bin is one ``T * C`` vector."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    B, T, F, C = _check_input(module, x)
    q = transpose(module.q_f(x), (0, 2, 1, 3)).reshape(B, F, -1)
    k = transpose(module.k_f(x), (0, 2, 1, 3)).reshape(B, F, -1)
    v = transpose(module.v_f(x), (0, 2, 1, 3)).reshape(B, F, T * C)
    out, weights = _attend(q, k, v, "frequency")
    out = transpose(out.reshape(B, F, T, C), (0, 2, 1, 3))
    return (out, weights) if return_attention else out


def atfa_forward(module: ATFAModule, x) -> Tensor:
    """``x + time_gain * time_branch(x) + freq_gain * frequency_branch(x)``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    out = x
    if module.use_atab:
        out = out + module.time_gain * atab_forward(module, x)
    if module.use_afab:
        out = out + module.freq_gain * afab_forward(module, x)
    return out


class AHAModule(Module):
    """One pooled 1x1 projection per ATFA output plus the residual scalar ``hier_gain``."""

    def __init__(self, channels: int, n_inputs: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_inputs = n_inputs
        self.proj = [_one_by_one(channels, 1, rng) for _ in range(n_inputs)]
        self.hier_gain = Parameter(0.0)

    def forward(self, features: Sequence[Tensor]) -> Tensor:
        return aha_forward(self, features)


def aha_weights(module: AHAModule, features: Sequence[Tensor]) -> Tensor:
    """Softmax over blocks of the pooled, projected logits; shape ``B x N``."""
    logits = []
    for f, proj in zip(features, module.proj):
        pooled = mean(f, axis=(1, 2), keepdims=True)
        logits.append(proj(pooled).reshape(f.shape[0], 1))
    return softmax(concat(logits, axis=1), axis=1)


def aha_forward(module: AHAModule, features: Sequence[Tensor]) -> Tensor:
    """Last ATFA output plus ``hier_gain`` times the :func:`aha_weights`-weighted sum of all outputs."""
    if len(features) != module.n_inputs:
        raise ShapeError(f"AHA: expected {module.n_inputs} feature maps, got {len(features)}")
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise ShapeError(f"AHA: feature maps have differing shapes {sorted(shapes)}")
    weights = aha_weights(module, features)
    B = features[0].shape[0]
    _record("hierarchy", weights.shape)
    stacked = stack(features, axis=1)
    context = (stacked * weights.reshape(B, module.n_inputs, 1, 1, 1)).sum(axis=1)
    return features[-1] + module.hier_gain * context


class AIAStack(Module):
    """A chain of ATFA blocks optionally followed by AHA over all their outputs."""

    def __init__(
        self,
        channels: int,
        n_atfa: int = 6,
        rng: np.random.Generator | None = None,
        use_atab: bool = True,
        use_afab: bool = True,
        use_aha: bool = True,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        if not (use_atab or use_afab):
            n_atfa = 0
        self.atfa = [ATFAModule(channels, rng, use_atab, use_afab) for _ in range(n_atfa)]
        self.aha = AHAModule(channels, n_atfa, rng) if use_aha and n_atfa else None

    def forward(self, x) -> Tensor:
        return aia_forward(self.atfa, self.aha, x)


def aia_forward(atfa_stack: Sequence[ATFAModule], aha: AHAModule | None, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    outputs = []
    h = x
    for block in atfa_stack:
        h = atfa_forward(block, h)
        outputs.append(h)
    if aha is None or not outputs:
        return h
    return aha_forward(aha, outputs)


def full_attention_reference(x, q_proj: Conv2D, k_proj: Conv2D, v_proj: Conv2D) -> Tensor:
    """Unfactorized attention over all ``T * F'`` positions; for comparison on small shapes only."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    B, T, F, C = x.shape
    q = q_proj(x).reshape(B, T * F, -1)
    k = k_proj(x).reshape(B, T * F, -1)
    v = v_proj(x).reshape(B, T * F, -1)
    out, _ = _attend(q, k, v, "full")
    return out.reshape(B, T, F, -1)
