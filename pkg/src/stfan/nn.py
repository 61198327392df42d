"""Small layer library.

Each layer knows its output extent for a given input extent and maps an
output index interval [lo, hi] along one spatial axis to the interval of
input indices it reads (clipped to the valid range).  Composing these maps
gives an exact receptive field for the assembled network.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autograd import ops
from .autograd.init import he_init
from .autograd.tensor import Tensor

Interval = tuple[int, int]


def _clip(lo: int, hi: int, n: int) -> Interval:
    return max(lo, 0), min(hi, n - 1)


def union(*ivs: Interval) -> Interval:
    return min(i[0] for i in ivs), max(i[1] for i in ivs)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def out_extent(self, n: int) -> int:
        return n

    def rf(self, lo: int, hi: int, n_in: int) -> Interval:
        return _clip(lo, hi, n_in)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, padding: int | None = None, *, rng, gain: float = 1.0, dtype=np.float32):
        if k % 2 == 0:
            raise ValueError(f"conv kernel must be odd, got {k}")
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.k = k
        self.weight = he_init((k, k, cin, cout), k * k * cin, rng, dtype=dtype)
        if gain != 1.0:
            self.weight.data *= np.asarray(gain, dtype=dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def out_extent(self, n: int) -> int:
        return ops.conv_out_extent(n, self.k, self.stride, self.padding)

    def rf(self, lo, hi, n_in):
        s, p = self.stride, self.padding
        return _clip(lo * s - p, hi * s - p + self.k - 1, n_in)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 4, stride: int = 2, padding: int = 1, *, rng, dtype=np.float32):
        self.k, self.stride, self.padding = k, stride, padding
        fan_in = max(1, (k // stride) ** 2 * cin)
        self.weight = he_init((k, k, cin, cout), fan_in, rng, dtype=dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)

    def out_extent(self, n: int) -> int:
        return ops.deconv_out_extent(n, self.k, self.stride, self.padding)

    def rf(self, lo, hi, n_in):
        # output i (uncropped index i + p) receives input j when s*j <= i + p <= s*j + k - 1
        s, p, k = self.stride, self.padding, self.k
        return _clip(-((-(lo + p - k + 1)) // s), (hi + p) // s, n_in)


class ResBlock(Module):
    """conv -> leaky relu -> conv, plus the identity skip.

    The second conv starts damped by ``branch_gain`` so stacked blocks begin
    close to the identity (there are no normalisation layers).
    """

    def __init__(self, c: int, *, rng, slope: float = 0.1, branch_gain: float = 0.1, dtype=np.float32):
        self.slope = slope
        self.conv1 = Conv2d(c, c, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(c, c, 3, rng=rng, gain=branch_gain, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv2(ops.leaky_relu(self.conv1(x), self.slope)))

    def rf(self, lo, hi, n_in):
        inner = self.conv1.rf(*self.conv2.rf(lo, hi, n_in), n_in)
        return union(_clip(lo, hi, n_in), inner)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.1):
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(x, self.slope)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def __call__(self, x: Tensor, trace=None, name: str = "") -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if trace is not None:
                trace(f"{name}.layers.{i}", x)
        return x

    def out_extent(self, n: int) -> int:
        for layer in self.layers:
            n = layer.out_extent(n)
        return n

    def rf(self, lo, hi, n_in):
        extents = [n_in]
        for layer in self.layers[:-1]:
            extents.append(layer.out_extent(extents[-1]))
        for layer, n in zip(reversed(self.layers), reversed(extents)):
            lo, hi = layer.rf(lo, hi, n)
        return lo, hi
