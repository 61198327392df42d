"""Filter adaptive convolution.

Every output element gets its own k x k filter:

    out[x, y, c] = sum_{n, m in [-r, r]} F[x, y, off(c, n, m)] * Q[x - n, y - m, c]

with off(c, n, m) = k*k*c + (n + r)*k + (m + r) and zero padding of width r.
Filters are applied raw (no normalisation) so taps may be negative.  There is
no mixing across channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd.ops import ShapeError, _pad
from .autograd.tensor import Tensor, record


@dataclass
class FilterBank:
    filters: Tensor
    k: int

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"filter size must be odd and positive, got k={self.k}")
        if self.filters.ndim != 3:
            raise ShapeError(f"filter bank must be (h, w, c*k*k), got {self.filters.shape}")
        if self.filters.shape[2] % (self.k * self.k):
            raise ShapeError(f"filter bank depth {self.filters.shape[2]} is not a multiple of k*k={self.k * self.k}")

    @property
    def r(self) -> int:
        return (self.k - 1) // 2

    @property
    def c(self) -> int:
        return self.filters.shape[2] // (self.k * self.k)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.filters.shape

    @classmethod
    def identity(cls, h: int, w: int, c: int, k: int, dtype=np.float64) -> "FilterBank":
        f = np.zeros((h, w, c, k, k), dtype=dtype)
        f[:, :, :, k // 2, k // 2] = 1.0
        return cls(Tensor(f.reshape(h, w, c * k * k)), k)


def filter_offset(c: int, n: int, m: int, k: int) -> int:
    r = (k - 1) // 2
    return k * k * c + (n + r) * k + (m + r)


def _check(q: np.ndarray, f: np.ndarray, k: int) -> tuple[int, int, int]:
    if q.ndim != 3:
        raise ShapeError(f"FAC features must be (h, w, c), got {q.shape}")
    h, w, c = q.shape
    if f.shape != (h, w, c * k * k):
        raise ShapeError(f"FAC filter bank shape {f.shape} does not match features {q.shape} with k={k} (expected {(h, w, c * k * k)})")
    return h, w, c


def fac_forward(q: np.ndarray, f: np.ndarray, k: int) -> np.ndarray:
    """Vectorised forward: one fused multiply-add per filter tap."""
    h, w, c = _check(q, f, k)
    r = (k - 1) // 2
    f5 = f.reshape(h, w, c, k, k)
    qp = _pad(q, r)
    out = np.zeros_like(q, dtype=np.result_type(q, f))
    for a in range(k):  # a = n + r
        for b in range(k):  # b = m + r
            # Q[x - n, y - m] lives at padded row x - n + r = x + (2r - a)
            out += f5[:, :, :, a, b] * qp[2 * r - a : 2 * r - a + h, 2 * r - b : 2 * r - b + w]
    return out


def fac_backward(dout: np.ndarray, q: np.ndarray, f: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients with respect to the features and the filter bank.

    The feature gradient accumulates taps in a fixed order, so repeated calls
    are bit-identical.
    """
    h, w, c = _check(q, f, k)
    if dout.shape != q.shape:
        raise ShapeError(f"FAC upstream gradient {dout.shape} does not match features {q.shape}")
    r = (k - 1) // 2
    f5 = f.reshape(h, w, c, k, k)
    qp = _pad(q, r)
    dqp = np.zeros(qp.shape, dtype=np.result_type(dout, f))
    df5 = np.empty((h, w, c, k, k), dtype=np.result_type(dout, q))
    for a in range(k):
        for b in range(k):
            rows = slice(2 * r - a, 2 * r - a + h)
            cols = slice(2 * r - b, 2 * r - b + w)
            df5[:, :, :, a, b] = dout * qp[rows, cols]
            dqp[rows, cols] += dout * f5[:, :, :, a, b]
    dq = dqp[r : r + h, r : r + w] if r else dqp
    return np.ascontiguousarray(dq), df5.reshape(h, w, c * k * k)


def fac_reference(q: np.ndarray, f: np.ndarray, k: int) -> np.ndarray:
    """Literal nested-loop evaluation; ground truth for tests, not for speed."""
    h, w, c = _check(q, f, k)
    r = (k - 1) // 2
    out = np.zeros((h, w, c), dtype=np.result_type(q, f))
    for x in range(h):
        for y in range(w):
            for ci in range(c):
                acc = 0.0
                for n in range(-r, r + 1):
                    for m in range(-r, r + 1):
                        xs, ys = x - n, y - m
                        if 0 <= xs < h and 0 <= ys < w:
                            acc += f[x, y, filter_offset(ci, n, m, k)] * q[xs, ys, ci]
                out[x, y, ci] = acc
    return out


def fac_reference_backward(dout: np.ndarray, q: np.ndarray, f: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Nested-loop gradients: dF[x, y, off] = dout[x, y, c] * Q[x - n, y - m, c] and
    the matching scatter into dQ."""
    h, w, c = _check(q, f, k)
    r = (k - 1) // 2
    dq = np.zeros((h, w, c), dtype=np.result_type(dout, f))
    df = np.zeros(f.shape, dtype=np.result_type(dout, q))
    for x in range(h):
        for y in range(w):
            for ci in range(c):
                g = dout[x, y, ci]
                for n in range(-r, r + 1):
                    for m in range(-r, r + 1):
                        xs, ys = x - n, y - m
                        if 0 <= xs < h and 0 <= ys < w:
                            o = filter_offset(ci, n, m, k)
                            df[x, y, o] = g * q[xs, ys, ci]
                            dq[xs, ys, ci] += g * f[x, y, o]
    return dq, df


# test hook: replaces fac_backward inside the autograd op when set
_backward_override = None


def fac(q: Tensor, bank: FilterBank) -> Tensor:
    """Differentiable FAC application (gradients flow to features and filters)."""
    k = bank.k
    f = bank.filters
    out = fac_forward(q.data, f.data, k)

    def backward(g):
        fn = _backward_override or fac_backward
        dq, df = fn(g, q.data, f.data, k)
        return (dq if q.requires_grad else None, df if f.requires_grad else None)

    return record("fac", out, (q, f), backward)
