"""Finite-difference checks for every differentiable operation, shared by tests and the CLI.

Each case draws random shapes (every dimension at most 8) from its own
seeded generator, builds float64 inputs and returns the worst relative
error between reverse-mode and central-difference gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as att
from . import losses as L
from .layers import conv2d, conv_transpose2d, glu, instance_norm, prelu, softmax, spectral_normalize
from .numerics import Tensor, away_from_kinks, gradient_check, promoted_precision

TOLERANCE = 1e-3
EPS = 1e-3


@dataclass
class GradResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _leaf(rng, shape, scale=1.0, kinks=False) -> Tensor:
    x = rng.standard_normal(shape) * scale
    if kinks:
        x = away_from_kinks(x)
    return Tensor(x, requires_grad=True)


def _dims(rng, n, low=1, high=8):
    return tuple(int(v) for v in rng.integers(low, high + 1, size=n))


def case_conv(rng):
    B, T, F = _dims(rng, 3, 1, 6)
    cin, cout = _dims(rng, 2, 1, 4)
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    st, sf = _dims(rng, 2, 1, 2)
    pt, pf = int(rng.integers(0, kh)), int(rng.integers(0, kw))
    T, F = max(T, kh), max(F, kw)
    x, k, b = _leaf(rng, (B, T, F, cin)), _leaf(rng, (kh, kw, cin, cout), 0.5), _leaf(rng, (cout,))
    return gradient_check(lambda: conv2d(x, k, b, (st, sf), (pt, pf)), [x, k, b])


def case_deconv(rng):
    B, T, F = _dims(rng, 3, 1, 5)
    cin, cout = _dims(rng, 2, 1, 4)
    kh, kw = 3, 5
    st, sf = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    pt, pf = int(rng.integers(0, 2)), int(rng.integers(0, 3))
    x, k, b = _leaf(rng, (B, T, F, cin)), _leaf(rng, (kh, kw, cin, cout), 0.5), _leaf(rng, (cout,))
    return gradient_check(lambda: conv_transpose2d(x, k, b, (st, sf), (pt, pf)), [x, k, b])


def case_instance_norm(rng):
    B, C = _dims(rng, 2, 1, 4)
    T, F = _dims(rng, 2, 2, 8)
    x = _leaf(rng, (B, T, F, C), 2.0)
    x.data += rng.standard_normal((1, 1, 1, C))
    scale, shift = _leaf(rng, (C,)), _leaf(rng, (C,))
    return gradient_check(lambda: instance_norm(x, scale, shift), [x, scale, shift])


def case_prelu(rng):
    shape = _dims(rng, 4)
    x = _leaf(rng, shape, kinks=True)
    slope = Tensor(rng.uniform(0.05, 0.5, size=shape[-1]), requires_grad=True)
    return gradient_check(lambda: prelu(x, slope), [x, slope])


def case_glu(rng):
    shape = _dims(rng, 3) + (2 * int(rng.integers(1, 5)),)
    x = _leaf(rng, shape)
    return gradient_check(lambda: glu(x), [x])


def case_softmax(rng):
    shape = _dims(rng, 3)
    axis = int(rng.integers(0, 3))
    x = _leaf(rng, shape, 2.0)
    return gradient_check(lambda: softmax(x, axis=axis), [x])


def case_spectral_norm(rng):
    shape = _dims(rng, 2, 1, 3) + _dims(rng, 2, 1, 6)
    k = _leaf(rng, shape)
    u = rng.standard_normal(shape[-1])
    u /= np.linalg.norm(u)
    # hold u fixed so repeated evaluations see the same normalizer estimate
    return gradient_check(lambda: spectral_normalize(k, u, update=False)[0], [k])


def _attention_input(rng):
    B = int(rng.integers(1, 3))
    T, F = _dims(rng, 2, 2, 6)
    return _leaf(rng, (B, T, F, 8), 0.5)


def _module_leaves(module, x):
    return [x] + module.parameters()


def case_atab(rng):
    x = _attention_input(rng)
    m = att.ATFAModule(8, rng, use_atab=True, use_afab=False)
    return gradient_check(lambda: att.atab_forward(m, x), _module_leaves(m, x))


def case_afab(rng):
    x = _attention_input(rng)
    m = att.ATFAModule(8, rng, use_atab=False, use_afab=True)
    return gradient_check(lambda: att.afab_forward(m, x), _module_leaves(m, x))


def case_atfa(rng):
    x = _attention_input(rng)
    m = att.ATFAModule(8, rng)
    m.time_gain.data[...] = rng.uniform(0.3, 1.0)
    m.freq_gain.data[...] = rng.uniform(0.3, 1.0)
    return gradient_check(lambda: att.atfa_forward(m, x), _module_leaves(m, x))


def case_aha(rng):
    n = int(rng.integers(2, 5))
    feats = [_attention_input(rng) for _ in range(1)]
    shape = feats[0].shape
    feats += [_leaf(rng, shape, 0.5) for _ in range(n - 1)]
    m = att.AHAModule(8, n, rng)
    m.hier_gain.data[...] = rng.uniform(0.3, 1.0)
    return gradient_check(lambda: att.aha_forward(m, feats), feats + m.parameters())


def _score_leaves(rng):
    n = int(rng.integers(1, 9))
    return _leaf(rng, (n,)), _leaf(rng, (n,))


def case_rals_d(rng):
    real, fake = _score_leaves(rng)
    return gradient_check(lambda: L.rals_discriminator_loss(real, fake), [real, fake])


def case_rals_g(rng):
    real, fake = _score_leaves(rng)
    return gradient_check(lambda: L.rals_generator_loss(real, fake), [real, fake])


def _l1_pairs(rng, n, high=8):
    """Leaves plus targets offset by at least the kink margin, so |a - b| stays differentiable."""
    shape = _dims(rng, 4, 1, high)
    out = []
    for _ in range(n):
        a = rng.standard_normal(shape)
        out.append((Tensor(a, requires_grad=True), Tensor(a + away_from_kinks(rng.standard_normal(shape)), requires_grad=True)))
    return out


def case_cycle(rng):
    (x, fgx), (y, gfy) = _l1_pairs(rng, 2)
    return gradient_check(lambda: L.cycle_loss(x, fgx, y, gfy), [x, fgx, y, gfy])


def case_identity(rng):
    (x, fx), (y, gy) = _l1_pairs(rng, 2)
    return gradient_check(lambda: L.identity_loss(x, fx, y, gy), [x, fx, y, gy])


def case_total(rng):
    (r1, f1), (r2, f2) = _score_leaves(rng), _score_leaves(rng)
    (x, fgx), (y, gfy), (x2, fx), (y2, gy) = _l1_pairs(rng, 4, high=4)

    def build():
        return L.total_generator_loss(
            L.rals_generator_loss(r1, f1),
            L.rals_generator_loss(r2, f2),
            L.cycle_loss(x, fgx, y, gfy),
            L.identity_loss(x2, fx, y2, gy),
        )

    return gradient_check(build, [r1, f1, r2, f2, x, fgx, y, gfy, x2, fx, y2, gy])


CASES: dict[str, Callable[[np.random.Generator], float]] = {
    "conv": case_conv,
    "deconv": case_deconv,
    "instance_norm": case_instance_norm,
    "prelu": case_prelu,
    "glu": case_glu,
    "softmax": case_softmax,
    "spectral_norm": case_spectral_norm,
    "atab": case_atab,
    "afab": case_afab,
    "atfa": case_atfa,
    "aha": case_aha,
    "rals_discriminator": case_rals_d,
    "rals_generator": case_rals_g,
    "cycle": case_cycle,
    "identity": case_identity,
    "total_generator": case_total,
}


def run_suite(seed: int = 0, repeats: int = 1, names=None) -> list[GradResult]:
    """Run each case ``repeats`` times with fresh random shapes; report the worst error per case."""
    results = []
    for i, (name, case) in enumerate(CASES.items()):
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        worst = 0.0
        for r in range(repeats):
            rng = np.random.default_rng([seed, i, r])
            with promoted_precision():
                worst = max(worst, case(rng))
        results.append(GradResult(name, worst, time.perf_counter() - start))
    return results
