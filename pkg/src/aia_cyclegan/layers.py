"""Convolution, normalization and activation layers on channels-last tensors.

All feature maps are laid out ``B x T x F x C``. Convolutions are
cross-correlations implemented by gathering ``kh*kw`` strided views into a
column matrix and running one matrix product.
"""

from __future__ import annotations

import numpy as np

from .numerics import Module, Parameter, ShapeError, Tensor
from .numerics import kernels
from .numerics.tensor import _STATE, _sigmoid, as_tensor

IN_EPS = 1e-5
PRELU_INIT = 0.25


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv_output_extent(n: int, k: int, s: int, p: int, transposed: bool = False) -> int:
    if transposed:
        return (n - 1) * s - 2 * p + k
    return (n + 2 * p - k) // s + 1


# -- functional forms ---------------------------------------------------------

def conv2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Strided, zero-padded cross-correlation: ``(B,T,F,Cin) -> (B,T',F',Cout)``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    st, sf = _pair(stride)
    pt, pf = _pair(padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    B, T, F, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    to = conv_output_extent(T, kh, st, pt)
    fo = conv_output_extent(F, kw, sf, pf)
    if to < 1 or fo < 1:
        raise ShapeError(f"conv2d: output extent ({to}, {fo}) invalid for input {(T, F)} and kernel {(kh, kw)}")
    pointwise = (kh, kw, st, sf, pt, pf) == (1, 1, 1, 1, 0, 0)
    if pointwise:
        cols2 = np.ascontiguousarray(x.data).reshape(-1, cin)
    else:
        cols2 = kernels.im2col(x.data, kh, kw, st, sf, pt, pf, to, fo).reshape(-1, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols2 @ wmat).reshape(B, to, fo, cout)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        grads = [None, None]
        if x.requires_grad:
            gcols = g2 @ wmat.T
            if pointwise:
                grads[0] = gcols.reshape(x.shape)
            else:
                grads[0] = kernels.col2im(gcols.reshape(B, to, fo, kh, kw, cin), T, F, st, sf, pt, pf)
        if kernel.requires_grad:
            grads[1] = (cols2.T @ g2).reshape(kernel.shape)
        if bias is not None:
            grads.append(kernels.channel_sums(g2) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor._result(out, parents, backward, "conv2d")


def conv_transpose2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Transposed convolution, the exact adjoint of :func:`conv2d`.

    ``kernel`` is ``(kh, kw, Cin, Cout)`` with ``Cin`` the channels of ``x``;
    the output extent is ``(n - 1) * s - 2 * p + k`` per axis.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    st, sf = _pair(stride)
    pt, pf = _pair(padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv_transpose2d: expected rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    B, T, F, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv_transpose2d: input has {cin} channels, kernel expects {kcin}")
    to = conv_output_extent(T, kh, st, pt, transposed=True)
    fo = conv_output_extent(F, kw, sf, pf, transposed=True)
    if to < 1 or fo < 1:
        raise ShapeError(f"conv_transpose2d: output extent ({to}, {fo}) invalid for input {(T, F)}")
    wmat = kernel.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    x2 = x.data.reshape(-1, cin)
    cols = (x2 @ wmat).reshape(B, T, F, kh, kw, cout)
    out = kernels.col2im(cols, to, fo, st, sf, pt, pf)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gc2 = kernels.im2col(g, kh, kw, st, sf, pt, pf, T, F).reshape(-1, kh * kw * cout)
        grads = [None, None]
        if x.requires_grad:
            grads[0] = (gc2 @ wmat.T).reshape(x.shape)
        if kernel.requires_grad:
            grads[1] = np.ascontiguousarray((x2.T @ gc2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3))
        if bias is not None:
            grads.append(kernels.channel_sums(g.reshape(-1, cout)) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor._result(out, parents, backward, "conv_transpose2d")


def instance_norm(x, scale, shift, eps: float = IN_EPS) -> Tensor:
    """Normalize each (item, channel) plane over time and frequency, then apply an affine map."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: expected B x T x F x C, got {x.shape}")
    B, T, F, C = x.shape
    if T * F < 2:
        raise ShapeError(f"instance_norm: plane of {T}x{F} has fewer than two elements")
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"instance_norm: affine shapes {scale.shape}, {shift.shape} != ({C},)")
    out, xhat, inv = kernels.instance_norm_forward(
        x.data.reshape(B, T * F, C), scale.data.astype(x.dtype), shift.data.astype(x.dtype), float(eps)
    )

    def backward(g):
        gx, gscale, gshift = kernels.instance_norm_backward(
            np.ascontiguousarray(g).reshape(B, T * F, C), xhat, inv, scale.data.astype(g.dtype), x.requires_grad
        )
        return (
            gx.reshape(x.shape) if x.requires_grad else None,
            gscale if scale.requires_grad else None,
            gshift if shift.requires_grad else None,
        )

    return Tensor._result(out.reshape(x.shape), (x, scale, shift), backward, "instance_norm")


def prelu(x, slope) -> Tensor:
    """``x`` where non-negative, ``slope[c] * x`` otherwise (per last-axis channel)."""
    x, slope = as_tensor(x), as_tensor(slope)
    if slope.shape != (x.shape[-1],):
        raise ShapeError(f"prelu: slope shape {slope.shape} != ({x.shape[-1]},)")
    C = x.shape[-1]
    x2 = x.data.reshape(-1, C)
    a = slope.data.astype(x.dtype)
    out = kernels.prelu_forward(x2, a).reshape(x.shape)

    def backward(g):
        gx, ga = kernels.prelu_backward(x2, a, np.ascontiguousarray(g).reshape(-1, C), x.requires_grad)
        return (gx.reshape(x.shape) if x.requires_grad else None, ga if slope.requires_grad else None)

    return Tensor._result(out, (x, slope), backward, "prelu")


def glu(x) -> Tensor:
    """Gated linear unit over the channel axis: first half times sigmoid of second half."""
    x = as_tensor(x)
    c2 = x.shape[-1]
    if c2 % 2:
        raise ShapeError(f"glu: channel count {c2} is odd")
    c = c2 // 2
    lin = x.data[..., :c]
    gate = _sigmoid(x.data[..., c:])
    out = lin * gate

    def backward(g):
        gg = g * gate
        return (np.concatenate([gg, gg * lin * (1.0 - gate)], axis=-1),)

    return Tensor._result(out, (x,), backward, "glu")


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (out * (g - dot),)

    return Tensor._result(out, (x,), backward, "softmax")


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    return v / (np.linalg.norm(v) + 1e-12)


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    return np.moveaxis(kernel, -1, 0).reshape(kernel.shape[-1], -1)


def spectral_normalize(kernel, u: np.ndarray, update: bool = True) -> tuple[Tensor, np.ndarray]:
    """Divide ``kernel`` by a power-iteration estimate of its largest singular value.

    The kernel is viewed as a ``Cout x rest`` matrix (last axis is ``Cout``).
    One power-iteration step refines ``u`` unless ``update`` is False. The
    singular vectors are treated as constants in the backward pass. Returns
    the normalized kernel and the (possibly updated) unit vector ``u``.
    """
    kernel = as_tensor(kernel)
    wm = _kernel_matrix(kernel.data).astype(np.float64)
    if not np.any(wm):
        raise ValueError("spectral_normalize: kernel is all zeros, largest singular value undefined")
    u64 = np.asarray(u, dtype=np.float64)
    if update:
        v = _l2_normalize(wm.T @ u64)
        u64 = _l2_normalize(wm @ v)
    v = _l2_normalize(wm.T @ u64)
    sigma = float(u64 @ wm @ v)
    # d sigma / d W = u v^T with u, v held fixed, mapped back to kernel layout
    dsigma = np.moveaxis(np.outer(u64, v).reshape((kernel.shape[-1],) + kernel.shape[:-1]), 0, -1).astype(kernel.dtype)
    out = kernel.data / kernel.dtype.type(sigma)

    def backward(g):
        return (g / sigma - dsigma * (np.sum(g * kernel.data, dtype=np.float64) / sigma**2),)

    new_u = u64.astype(np.asarray(u).dtype)
    return Tensor._result(out.astype(kernel.dtype), (kernel,), backward, "spectral_normalize"), new_u


# -- modules ------------------------------------------------------------------

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SpectralNorm(Module):
    """Holds the left singular-vector estimate ``u`` for one kernel."""

    buffer_names = ("u",)

    def __init__(self, cout: int, rng: np.random.Generator):
        self.u = _l2_normalize(rng.standard_normal(cout)).astype(_STATE["dtype"])
        self.update = True

    def forward(self, kernel: Tensor) -> Tensor:
        out, self.u = spectral_normalize(kernel, self.u, update=self.update)
        return out

    def sigma(self, kernel: np.ndarray) -> float:
        wm = _kernel_matrix(kernel).astype(np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        v = _l2_normalize(wm.T @ u)
        return float(u @ wm @ v)


class Conv2D(Module):
    """2-D (transposed) convolution with optional spectral normalization of the kernel."""

    def __init__(
        self,
        cin: int,
        cout: int,
        kernel_size=(3, 5),
        stride=(1, 2),
        padding=(1, 2),
        transposed: bool = False,
        spectral_norm: bool = False,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = _pair(kernel_size)
        fan_in = kh * kw * cin
        self.kernel = Parameter(_uniform(rng, (kh, kw, cin, cout), fan_in))
        self.bias = Parameter(_uniform(rng, (cout,), fan_in))
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.transposed = transposed
        self.sn = SpectralNorm(cout, rng) if spectral_norm else None

    def output_extent(self, t: int, f: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[:2]
        return (
            conv_output_extent(t, kh, self.stride[0], self.padding[0], self.transposed),
            conv_output_extent(f, kw, self.stride[1], self.padding[1], self.transposed),
        )

    def forward(self, x) -> Tensor:
        kernel = self.sn(self.kernel) if self.sn is not None else self.kernel
        op = conv_transpose2d if self.transposed else conv2d
        return op(x, kernel, self.bias, self.stride, self.padding)


class InstanceNorm(Module):
    def __init__(self, channels: int, eps: float = IN_EPS):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return instance_norm(x, self.scale, self.shift, self.eps)


class PReLU(Module):
    def __init__(self, channels: int, init: float = PRELU_INIT):
        self.slope = Parameter(np.full(channels, init))

    def forward(self, x) -> Tensor:
        return prelu(x, self.slope)
