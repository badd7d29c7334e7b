"""Parameter containers built on the tensor library."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .rng import Rng
from .tensor import GRUParams, Tensor, layer_norm_example, layer_norm_masked, linear


def uniform_init(rng: Rng, shape: tuple, fan_in: int) -> Tensor:
    """Parameter drawn from U(-sqrt(4/fan_in), +sqrt(4/fan_in))."""
    bound = math.sqrt(4.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal parameter registry: walks attributes for Tensors and Modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            yield from _walk(path, value)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={missing}, unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for '{name}': {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr)


def _walk(path: str, value) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, GRUParams):
        for name, t in value.tensors().items():
            yield f"{path}.{name}", t
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng):
        self.weight = uniform_init(rng, (n_in, n_out), fan_in=n_in)
        self.bias = uniform_init(rng, (n_out,), fan_in=n_in)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """Example-wide layer norm with scalar gain/bias."""

    def __init__(self, eps: float = 1e-8):
        self.gain = Tensor(np.ones(()), requires_grad=True)
        self.bias = Tensor(np.zeros(()), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm_example(x, self.gain, self.bias, self.eps)

    def masked(self, x: Tensor, mask: np.ndarray) -> Tensor:
        return layer_norm_masked(x, self.gain, self.bias, mask, self.eps)


class GRUCell(Module):
    def __init__(self, n_in: int, n_h: int, rng: Rng):
        self.params = GRUParams(
            w_z=uniform_init(rng, (n_in, n_h), fan_in=n_in),
            u_z=uniform_init(rng, (n_h, n_h), fan_in=n_h),
            b_z=uniform_init(rng, (n_h,), fan_in=n_h),
            w_r=uniform_init(rng, (n_in, n_h), fan_in=n_in),
            u_r=uniform_init(rng, (n_h, n_h), fan_in=n_h),
            b_r=uniform_init(rng, (n_h,), fan_in=n_h),
            w_h=uniform_init(rng, (n_in, n_h), fan_in=n_in),
            u_h=uniform_init(rng, (n_h, n_h), fan_in=n_h),
            b_h=uniform_init(rng, (n_h,), fan_in=n_h),
        )


class Embedding(Module):
    """Token embedding table; init treats it as a linear map from one-hots,
    so fan_in is the vocabulary size."""

    def __init__(self, n_tokens: int, dim: int, rng: Rng):
        self.table = uniform_init(rng, (n_tokens, dim), fan_in=n_tokens)
