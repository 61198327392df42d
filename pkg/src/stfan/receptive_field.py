"""Empirical receptive fields from gradient footprints."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd.tensor import Tensor, no_grad
from .fac import FilterBank
from .model import STFAN, ModelConfig, RecurrentState, build_model

Box = tuple[int, int, int, int]  # (row_lo, row_hi, col_lo, col_hi), inclusive


def gradient_footprint(model_fn: Callable[[Tensor], Tensor], output_pixel: tuple[int, int], input_shape, seed: int = 0) -> Box:
    """Bounding box of input pixels with a non-zero gradient for one output pixel.

    A unit gradient is seeded on every channel of ``output_pixel``; the test
    for "non-zero" is exact, which is meaningful because padding is zero.
    """
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.0, 1.0, size=tuple(input_shape)), requires_grad=True)
    y = model_fn(x)
    seed_grad = np.zeros_like(y.data)
    seed_grad[output_pixel[0], output_pixel[1]] = 1.0
    y.backward(seed_grad)
    if x.grad is None:
        raise ValueError("output does not depend on the input")
    mask = np.abs(x.grad).reshape(x.shape[0], x.shape[1], -1).sum(axis=2) > 0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("gradient footprint is empty")
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def box_width(box: Box) -> int:
    return max(box[1] - box[0], box[3] - box[2]) + 1


def analytic_box(model: STFAN, pixel: tuple[int, int], extent: tuple[int, int], mode: str = "content") -> Box:
    r = model.receptive_interval(pixel[0], extent[0], mode)
    c = model.receptive_interval(pixel[1], extent[1], mode)
    return r[0], r[1], c[0], c[1]


def probe_extent(model: STFAN, margin: int = 8) -> int:
    """Smallest square extent (multiple of the stage divisor) that holds the
    unclipped receptive field of its centre pixel with ``margin`` to spare."""
    d = model.config.divisor
    n = 4 * d
    while True:
        p = n // 2
        lo, hi = model.receptive_interval(p, n, "full")
        if lo >= margin and hi <= n - 1 - margin:
            return n
        n += 4 * d


def step_fn(model: STFAN, state: RecurrentState, mode: str) -> Callable[[Tensor], Tensor]:
    """B_t -> R_t for one step.  In "content" mode the filter banks are frozen
    (computed once without gradient) so only the FAC-transformed feature path
    and the residual skip are differentiated."""
    if mode == "full":
        return lambda B: model.forward_step(B, state).R
    with no_grad():
        B0 = Tensor(np.asarray(state.B_prev.data))
        F_align, F_deblur, _ = model.generate_filters(state.B_prev, state.R_prev, B0) if model.encoder is not None else (None, None, None)
    frozen = (
        FilterBank(Tensor(F_align.filters.data), F_align.k) if F_align is not None else None,
        FilterBank(Tensor(F_deblur.filters.data), F_deblur.k) if F_deblur is not None else None,
    )
    return lambda B: model.forward_step(B, state, banks=frozen).R


def probe_state(model: STFAN, extent: int, seed: int = 1) -> RecurrentState:
    """Random non-zero state so every path carries gradient."""
    rng = np.random.default_rng(seed)
    d = model.config.divisor
    dt = model.dtype
    H = Tensor(rng.standard_normal((extent // d, extent // d, model.config.fac_channels)).astype(dt))
    B = Tensor(rng.uniform(0, 1, (extent, extent, 3)).astype(dt))
    R = Tensor(rng.uniform(0, 1, (extent, extent, 3)).astype(dt))
    return RecurrentState(H_prev=H, B_prev=B, R_prev=R)


def measure(model: STFAN, mode: str = "content", extent: int | None = None) -> dict:
    """Measured footprint and analytic box at the centre pixel."""
    n = probe_extent(model) if extent is None else extent
    p = (n // 2, n // 2)
    state = probe_state(model, n)
    measured = gradient_footprint(step_fn(model, state, mode), p, (n, n, 3))
    analytic = analytic_box(model, p, (n, n), mode)
    return {
        "extent": n,
        "pixel": p,
        "measured": measured,
        "analytic": analytic,
        "measured_width": box_width(measured),
        "analytic_width": box_width(analytic),
    }


def rf_model(config: ModelConfig) -> STFAN:
    """fp64 copy of the architecture for exact footprint probes."""
    return build_model(ModelConfig(**{**config.to_dict(), "dtype": "float64"}))


def measured_rf_width(config: ModelConfig, mode: str = "content") -> int:
    return measure(rf_model(config), mode)["measured_width"]
