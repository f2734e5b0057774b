"""Learnable leaves and a small container protocol for layers and models."""

from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from .tensor import Tensor


class Parameter(Tensor):
    """A named learnable leaf whose ``grad`` starts at zero."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class Module:
    """Base class: discovers parameters, submodules and buffers by attribute walk.

    Buffers are non-learned arrays that must survive a checkpoint (for
    example a spectral-norm singular-vector estimate); subclasses list their
    attribute names in ``buffer_names``.
    """

    buffer_names: tuple[str, ...] = ()

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            if isinstance(val, Parameter):
                yield prefix + key, val
            else:
                yield from val.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.buffer_names:
            yield prefix + name, getattr(self, name)
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def set_buffer(self, path: str, value: np.ndarray) -> None:
        owner: Module = self
        *parts, leaf = path.split(".")
        i = 0
        while i < len(parts):
            attr = getattr(owner, parts[i])
            if isinstance(attr, (list, tuple)):
                attr = attr[int(parts[i + 1])]
                i += 1
            owner = attr
            i += 1
        current = getattr(owner, leaf)
        if current.shape != value.shape:
            raise ValueError(f"buffer {path}: shape {value.shape} != {current.shape}")
        setattr(owner, leaf, value.astype(current.dtype))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({f"{name}#buffer": buf for name, buf in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"parameter {name}: shape {arrays[name].shape} != {p.shape}")
            p.data = arrays[name].astype(p.dtype)
        for name, _ in list(self.named_buffers()):
            key = f"{name}#buffer"
            if key not in arrays:
                raise KeyError(f"missing buffer {name!r}")
            self.set_buffer(name, arrays[key])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (used for promoted-precision checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for _, mod in self.named_modules():
            for bname in mod.buffer_names:
                setattr(mod, bname, getattr(mod, bname).astype(dtype))
        return self

    def parameter_census(self) -> dict[str, int]:
        census = {name: int(p.size) for name, p in self.named_parameters()}
        census["__total__"] = sum(census.values())
        return census

    @contextlib.contextmanager
    def frozen(self) -> Iterator["Module"]:
        """Treat all parameters as constants inside the block.

        Run ``backward`` before leaving the block; the flags are consulted
        when gradients are accumulated, not when the graph is built.
        """
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError
