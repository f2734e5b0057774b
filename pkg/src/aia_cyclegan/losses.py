"""Relativistic average least-squares, cycle and identity losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .numerics import ShapeError, Tensor, as_tensor, tabs

CYCLE_WEIGHT = 5.0
IDENTITY_WEIGHT = 10.0


@dataclass
class LossBreakdown:
    rals_g_xy: float
    rals_g_yx: float
    rals_d_x: float
    rals_d_y: float
    cycle: float
    identity: float
    total_g: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _scores(x) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ValueError("score list is empty")
    return x


def rals_discriminator_loss(real_scores, fake_scores) -> Tensor:
    """``mean((D(real) - mean D(fake) - 1)^2) + mean((D(fake) - mean D(real) + 1)^2)``."""
    real, fake = _scores(real_scores), _scores(fake_scores)
    real_term = ((real - fake.mean() - 1.0) ** 2).mean()
    fake_term = ((fake - real.mean() + 1.0) ** 2).mean()
    return real_term + fake_term


def rals_generator_loss(real_scores, fake_scores) -> Tensor:
    """``mean((D(fake) - mean D(real) - 1)^2) + mean((D(real) - mean D(fake) + 1)^2)``."""
    real, fake = _scores(real_scores), _scores(fake_scores)
    fake_term = ((fake - real.mean() - 1.0) ** 2).mean()
    real_term = ((real - fake.mean() + 1.0) ** 2).mean()
    return fake_term + real_term


def _multiscale(loss, real_heads: Sequence, fake_heads: Sequence) -> Tensor:
    if len(real_heads) != len(fake_heads) or not real_heads:
        raise ValueError("real and fake head lists must be non-empty and of equal length")
    total = loss(real_heads[0], fake_heads[0])
    for r, f in zip(real_heads[1:], fake_heads[1:]):
        total = total + loss(r, f)
    return total * (1.0 / len(real_heads))


def multiscale_discriminator_loss(real_heads: Sequence, fake_heads: Sequence) -> Tensor:
    """Discriminator loss evaluated per head and averaged."""
    return _multiscale(rals_discriminator_loss, real_heads, fake_heads)


def multiscale_generator_loss(real_heads: Sequence, fake_heads: Sequence) -> Tensor:
    return _multiscale(rals_generator_loss, real_heads, fake_heads)


def _mae(a, b, what: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return tabs(a - b).mean()


def cycle_loss(x, f_of_g_x, y, g_of_f_y) -> Tensor:
    """Per-element mean absolute round-trip error, summed over both cycles."""
    return _mae(f_of_g_x, x, "cycle_loss") + _mae(g_of_f_y, y, "cycle_loss")


def identity_loss(x, f_of_x, y, g_of_y) -> Tensor:
    """Per-element mean absolute deviation of each generator from identity on its target domain."""
    return _mae(f_of_x, x, "identity_loss") + _mae(g_of_y, y, "identity_loss")


def total_generator_loss(
    rals_g_xy,
    rals_g_yx,
    cycle,
    identity,
    cycle_weight: float = CYCLE_WEIGHT,
    identity_weight: float = IDENTITY_WEIGHT,
    identity_active: bool = True,
):
    """Adversarial terms plus weighted cycle term, plus weighted identity term when active."""
    total = rals_g_xy + rals_g_yx + cycle_weight * cycle
    if identity_active:
        total = total + identity_weight * identity
    return total
