"""Differentiable operations on channel-last (h, w, c) tensors.

Convolutions lower to a single matmul over im2col patches.  Shapes are
checked eagerly and mismatches raise :class:`ShapeError`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, record


class ShapeError(ValueError):
    pass


def _check_hwc(x: Tensor, what: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{what} must be rank-3 (h, w, c), got shape {x.shape}")


def conv_out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def deconv_out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return stride * (n - 1) + k - 2 * padding


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    s0, s1, s2 = xp.strides
    c = xp.shape[2]
    view = as_strided(
        xp,
        shape=(ho, wo, kh, kw, c),
        strides=(s0 * stride, s1 * stride, s0, s1, s2),
        writeable=False,
    )
    return view.reshape(ho * wo, kh * kw * c)


def _scatter_patches(cols: np.ndarray, out_shape, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_patches`: add (ho, wo, kh, kw, c) patches into ``out_shape``."""
    acc = np.zeros(out_shape, dtype=cols.dtype)
    cols = cols.reshape(ho, wo, kh, kw, out_shape[2])
    for i in range(kh):
        for j in range(kw):
            acc[i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return acc


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    h, w, c = x.shape
    out = np.zeros((h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    out[p : p + h, p : p + w] = x
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (h, w, c_in) with ``weight`` (kh, kw, c_in, c_out)."""
    _check_hwc(x, "conv2d input")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (kh, kw, c_in, c_out), got {weight.shape}")
    kh, kw, cin, cout = weight.shape
    h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels but weight {weight.shape} expects {cin}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    ho = conv_out_extent(h, kh, stride, padding)
    wo = conv_out_extent(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {kh}x{kw}")

    wmat = weight.data.reshape(kh * kw * cin, cout)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        cols = x.data.reshape(h * w, c)
    else:
        cols = _patches(_pad(x.data, padding), kh, kw, stride, ho, wo)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(ho, wo, cout)

    def backward(g):
        g2 = g.reshape(ho * wo, cout)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = g2 @ wmat.T
            if kh == 1 and kw == 1 and stride == 1 and padding == 0:
                gx = dcols.reshape(h, w, c)
            else:
                padded = (h + 2 * padding, w + 2 * padding, c)
                gx = _scatter_patches(dcols, padded, kh, kw, stride, ho, wo)
                if padding:
                    gx = gx[padding:-padding, padding:-padding]
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, inputs, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is (kh, kw, c_in, c_out).

    Each input pixel scatters ``x[i, j] @ weight[a, b]`` to output location
    (stride*i + a - padding, stride*j + b - padding).
    """
    _check_hwc(x, "conv_transpose2d input")
    if weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d weight must be (kh, kw, c_in, c_out), got {weight.shape}")
    kh, kw, cin, cout = weight.shape
    h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"conv_transpose2d: input has {c} channels but weight {weight.shape} expects {cin}")
    hf = stride * (h - 1) + kh
    wf = stride * (w - 1) + kw
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: padding {padding} crops away the whole output")

    # (c_in, kh*kw*c_out) so a row of x maps to one full output patch
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    x2 = x.data.reshape(h * w, cin)
    full = _scatter_patches(x2 @ wmat, (hf, wf, cout), kh, kw, stride, h, w)
    out = full[padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + bias.data
    else:
        out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.zeros((hf, wf, cout), dtype=g.dtype)
        gfull[padding : padding + ho, padding : padding + wo] = g
        dcols = _patches(gfull, kh, kw, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (dcols @ wmat.T).reshape(h, w, cin)
        if weight.requires_grad:
            gw = (x2.T @ dcols).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
            gw = np.ascontiguousarray(gw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv_transpose2d", out, inputs, backward)


def leaky_relu(x: Tensor, negative_slope: float = 0.1) -> Tensor:
    # x == 0 takes the negative-slope branch
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * negative_slope)

    def backward(g):
        return (np.where(pos, g, g * negative_slope),)

    return record("leaky_relu", out, (x,), backward)


def concat_channels(*xs: Tensor) -> Tensor:
    for t in xs:
        _check_hwc(t, "concat_channels input")
    hw = xs[0].shape[:2]
    for t in xs[1:]:
        if t.shape[:2] != hw:
            raise ShapeError(f"concat_channels: spatial extents differ: {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=2)
    bounds = np.cumsum([0] + [t.shape[2] for t in xs])

    def backward(g):
        return tuple(g[:, :, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return record("concat_channels", out, xs, backward)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        out = a.data + np.asarray(b, dtype=a.dtype)
        return record("add_scalar", out, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -np.asarray(b))
    if not isinstance(a, Tensor):
        return add(mul(b, -1.0), a)
    _same_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        s = np.asarray(b, dtype=a.dtype)
        return record("mul_scalar", a.data * s, (a,), lambda g: (g * s,))
    if not isinstance(a, Tensor):
        return mul(b, a)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return record("mean", np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def square(x: Tensor) -> Tensor:
    d = x.data
    return record("square", d * d, (x,), lambda g: (2 * g * d,))


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))
