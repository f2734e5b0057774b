"""Generator and multi-scale discriminator."""

from __future__ import annotations

import numpy as np

from .attention import AIAStack
from .layers import Conv2D, InstanceNorm, PReLU, glu
from .numerics import Module, ShapeError, Tensor, softplus

FREQ_BINS = 257
GEN_KERNEL = (3, 5)
GEN_STRIDE = (1, 2)
GEN_PADDING = (1, 2)
DISC_CHANNELS = (8, 16, 32, 64, 64, 64)
DISC_STRIDES = ((2, 2), (2, 2), (2, 2), (2, 2), (1, 1), (1, 1))
DISC_MID_LAYER = 3


class GatedBlock(Module):
    """(de)conv to twice the target channels, instance norm, PReLU, then GLU halving."""

    def __init__(self, cin: int, cout: int, transposed: bool, rng: np.random.Generator):
        self.conv = Conv2D(cin, 2 * cout, GEN_KERNEL, GEN_STRIDE, GEN_PADDING, transposed=transposed, rng=rng)
        self.norm = InstanceNorm(2 * cout)
        self.act = PReLU(2 * cout)

    def forward(self, x) -> Tensor:
        return glu(self.act(self.norm(self.conv(x))))


class Generator(Module):
    """Three down-blocks, the AIA bottleneck, three up-blocks and a softplus output.

    With ``channels = C`` the channel plan is ``1 -> C/4 -> C/2 -> C`` on the
    way down and the mirror on the way up. Frequency goes 257 -> 129 -> 65 -> 33
    and back; the frame axis is preserved.
    """

    def __init__(
        self,
        channels: int = 64,
        n_atfa: int = 6,
        use_atab: bool = True,
        use_afab: bool = True,
        use_aha: bool = True,
        rng: np.random.Generator | None = None,
        freq_bins: int = FREQ_BINS,
    ):
        if channels % 8:
            raise ValueError(f"generator channels must be divisible by 8, got {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.freq_bins = freq_bins
        plan = [1, channels // 4, channels // 2, channels]
        self.down = [GatedBlock(plan[i], plan[i + 1], False, rng) for i in range(3)]
        self.aia = AIAStack(channels, n_atfa, rng, use_atab, use_afab, use_aha)
        self.up = [GatedBlock(plan[3 - i], plan[2 - i], True, rng) for i in range(2)]
        self.out = Conv2D(plan[1], 1, GEN_KERNEL, GEN_STRIDE, GEN_PADDING, transposed=True, rng=rng)

    def forward(self, x, skip_aia: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[2] != self.freq_bins or x.shape[3] != 1:
            raise ShapeError(f"generator: expected B x T x {self.freq_bins} x 1 input, got {x.shape}")
        h = x
        for block in self.down:
            h = block(h)
        if not skip_aia:
            h = self.aia(h)
        for block in self.up:
            h = block(h)
        return softplus(self.out(h))


class MultiScaleDiscriminator(Module):
    """Six spectrally-normalized convolutions with PReLU; heads after layer 3 and layer 6.

    Each head is a spectrally-normalized 1x1 convolution to one channel
    followed by a global mean, so the forward pass yields two scores per item.
    """

    def __init__(self, rng: np.random.Generator | None = None, channels=DISC_CHANNELS, mid_layer: int = DISC_MID_LAYER):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mid_layer = mid_layer
        convs, acts = [], []
        cin = 1
        for cout, stride in zip(channels, DISC_STRIDES):
            convs.append(Conv2D(cin, cout, (3, 3), stride, (1, 1), spectral_norm=True, rng=rng))
            acts.append(PReLU(cout))
            cin = cout
        self.convs = convs
        self.acts = acts
        self.mid_head = Conv2D(channels[mid_layer - 1], 1, (1, 1), (1, 1), (0, 0), spectral_norm=True, rng=rng)
        self.final_head = Conv2D(channels[-1], 1, (1, 1), (1, 1), (0, 0), spectral_norm=True, rng=rng)

    def set_power_iteration(self, enabled: bool) -> None:
        for conv in self.convs + [self.mid_head, self.final_head]:
            conv.sn.update = enabled

    def forward(self, x) -> tuple[Tensor, Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[3] != 1:
            raise ShapeError(f"discriminator: expected B x T x F x 1 input, got {x.shape}")
        B = x.shape[0]
        h = x
        mid = None
        for i, (conv, act) in enumerate(zip(self.convs, self.acts), start=1):
            h = act(conv(h))
            if i == self.mid_layer:
                mid = self.mid_head(h).mean(axis=(1, 2, 3))
        final = self.final_head(h).mean(axis=(1, 2, 3))
        return final.reshape(B), mid.reshape(B)
