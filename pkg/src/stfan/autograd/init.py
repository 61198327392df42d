"""Seeded parameter initialisation."""

from __future__ import annotations

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


def he_variance(fan_in: int, negative_slope: float = 0.1) -> float:
    return 2.0 / (fan_in * (1.0 + negative_slope**2))


def he_init(shape, fan_in: int, rng_seed, negative_slope: float = 0.1, dtype=DEFAULT_DTYPE) -> Tensor:
    """Zero-mean normal with leaky-relu corrected He variance.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``; passing the
    same generator through a sequence of calls gives a reproducible stream.
    """
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    std = np.sqrt(he_variance(fan_in, negative_slope))
    data = rng.standard_normal(size=tuple(shape)) * std
    return Tensor(data.astype(dtype), requires_grad=True)
