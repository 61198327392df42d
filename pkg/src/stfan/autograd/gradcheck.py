"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = float(np.finfo(np.float64).eps ** (1.0 / 3.0))


class NonFiniteError(FloatingPointError):
    pass


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point,
    step: float = DEFAULT_STEP,
    coords=None,
    params: list[Tensor] | None = None,
) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``fn`` maps a float64 tensor to a scalar tensor.  When ``params`` is
    given, those tensors are checked instead of ``point`` (``fn`` is then
    called with ``point`` unchanged each time).  ``coords`` limits the check
    to a subset of flat indices per checked tensor.
    """
    x = Tensor(np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64), requires_grad=params is None)
    targets = params if params is not None else [x]
    for t in targets:
        if t.dtype != np.float64:
            raise TypeError("finite_diff_check requires float64 tensors")
        t.grad = None

    out = fn(x)
    if out.size != 1:
        raise ValueError(f"fn must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("fn is non-finite at the base point")
    out.backward()

    worst = 0.0
    for ti, t in enumerate(targets):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(x).data)
            flat[i] = orig - step
            fm = float(fn(x).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"fn is non-finite when perturbing tensor {ti} coordinate {i}")
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
