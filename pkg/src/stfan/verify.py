"""Oracle and finite-difference verification suites (always fp64)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fac as fac_mod
from .autograd import ops
from .autograd.gradcheck import finite_diff_check
from .autograd.tensor import Tensor
from .fac import FilterBank, fac_backward, fac_forward, fac_reference
from .losses import FeatureExtractor, LossConfig, deblur_loss, mse_loss, perceptual_loss
from .model import ModelConfig, build_model

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-6
F64 = np.float64


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def conv2d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, padding: int) -> np.ndarray:
    """Quadruple-loop cross-correlation used as the conv oracle."""
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                acc = 0.0 if b is None else float(b[o])
                for a in range(kh):
                    for bb in range(kw):
                        y, xx = i * stride + a - padding, j * stride + bb - padding
                        if 0 <= y < h and 0 <= xx < wd:
                            acc += float(np.dot(x[y, xx], w[a, bb, :, o]))
                out[i, j, o] = acc
    return out


def fac_configs(rng: np.random.Generator, count: int = 24) -> list[tuple[int, int, int, int]]:
    """(h, w, c, k) cases covering every k in {1,3,5,7}, c in {1,2,8} and 1x1 maps."""
    fixed = [(1, 1, c, k) for k in (1, 3, 5, 7) for c in (1, 2, 8)]
    fixed += [(5, 5, 2, 3), (4, 7, 1, 5), (9, 6, 8, 7)]
    while len(fixed) < count:
        fixed.append((int(rng.integers(1, 10)), int(rng.integers(1, 10)), int(rng.choice([1, 2, 3, 8])), int(rng.choice([1, 3, 5, 7]))))
    return fixed


def _rand_case(rng, h, w, c, k):
    return rng.standard_normal((h, w, c)), rng.standard_normal((h, w, c * k * k))


def check_fac_oracle(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    cases = fac_configs(rng)
    worst = 0.0
    for h, w, c, k in cases:
        q, f = _rand_case(rng, h, w, c, k)
        worst = max(worst, float(np.abs(fac_forward(q, f, k) - fac_reference(q, f, k)).max()))
    return CheckResult("fac-oracle", worst <= ORACLE_TOL, worst, ORACLE_TOL, f"{len(cases)} configurations")


def check_fac_identity(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for h, w, c, k in [(1, 1, 1, 1), (4, 5, 3, 3), (6, 6, 2, 5), (3, 8, 8, 7)]:
        q = rng.standard_normal((h, w, c))
        out = fac_forward(q, FilterBank.identity(h, w, c, k, F64).filters.data, k)
        mismatches += int(not np.array_equal(out, q))
    return CheckResult("fac-identity", mismatches == 0, float(mismatches), 0.0, "bitwise in fp64")


def check_fac_bilinearity(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for h, w, c, k in [(5, 5, 2, 3), (7, 4, 3, 5), (6, 6, 1, 7)]:
        q1, f1 = _rand_case(rng, h, w, c, k)
        q2, f2 = _rand_case(rng, h, w, c, k)
        a, b = rng.standard_normal(2)
        lhs = fac_forward(a * q1 + b * q2, f1, k)
        rhs = a * fac_forward(q1, f1, k) + b * fac_forward(q2, f1, k)
        worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
        lhs = fac_forward(q1, a * f1 + b * f2, k)
        rhs = a * fac_forward(q1, f1, k) + b * fac_forward(q1, f2, k)
        worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
    return CheckResult("fac-bilinearity", worst <= ORACLE_TOL, worst, ORACLE_TOL, "linear in Q and in F")


def check_fac_adjoint(seed: int = 0) -> CheckResult:
    """<A q, y> == <q, A^T y> for both linear maps q -> FAC(q, F) and F -> FAC(q, F)."""
    rng = np.random.default_rng(seed)
    backward = fac_mod._backward_override or fac_backward
    worst = 0.0
    for h, w, c, k in [(4, 4, 2, 3), (6, 5, 3, 5), (7, 7, 1, 7), (1, 1, 2, 3), (5, 8, 8, 1)]:
        q, f = _rand_case(rng, h, w, c, k)
        y = rng.standard_normal((h, w, c))
        fwd = float(np.sum(fac_forward(q, f, k) * y))
        dq, df = backward(y, q, f, k)
        worst = max(worst, _rel(fwd, float(np.sum(q * dq))), _rel(fwd, float(np.sum(f * df))))
    return CheckResult("fac-adjoint", worst <= ORACLE_TOL, worst, ORACLE_TOL, "features and filters")


def check_fac_gradient(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = [(4, 4, 2, 3), (3, 5, 1, 5), (2, 2, 3, 1), (5, 3, 2, 3), (1, 1, 2, 3)]
    for h, w, c, k in cases:
        q0, f0 = _rand_case(rng, h, w, c, k)
        y = rng.standard_normal((h, w, c))
        yt = Tensor(y)
        fixed_f = Tensor(f0)
        worst = max(worst, finite_diff_check(lambda q: ops.sum(ops.mul(fac_mod.fac(q, FilterBank(fixed_f, k)), yt)), q0))
        fixed_q = Tensor(q0)
        worst = max(worst, finite_diff_check(lambda f: ops.sum(ops.mul(fac_mod.fac(fixed_q, FilterBank(f, k)), yt)), f0))
    return CheckResult("fac-gradient", worst <= GRAD_TOL, worst, GRAD_TOL, f"{len(cases)} cases, d/dQ and d/dF")


def check_conv_oracle(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for (h, w, cin, cout, k, s, p) in [(6, 6, 2, 2, 3, 2, 1), (7, 5, 3, 4, 3, 1, 1), (8, 8, 1, 2, 5, 2, 2), (5, 5, 4, 3, 1, 1, 0)]:
        x = rng.standard_normal((h, w, cin))
        wt = rng.standard_normal((k, k, cin, cout))
        b = rng.standard_normal(cout)
        got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), s, p).data
        worst = max(worst, float(np.abs(got - conv2d_direct(x, wt, b, s, p)).max()))
    return CheckResult("conv2d-oracle", worst <= ORACLE_TOL, worst, ORACLE_TOL, "direct summation")


def _op_cases() -> dict[str, list[Callable[[np.random.Generator], tuple[Callable, np.ndarray]]]]:
    """Per op, three differently shaped scalar functions of one fp64 input."""

    def weighted(y):
        yt = Tensor(y)
        return lambda t: ops.sum(ops.mul(t, yt))

    def conv(shape, k, cin_out, s, p, transpose=False):
        def make(rng):
            x = rng.standard_normal(shape)
            w = Tensor(rng.standard_normal((k, k, shape[2], cin_out)))
            b = Tensor(rng.standard_normal(cin_out), requires_grad=True)
            op = ops.conv_transpose2d if transpose else ops.conv2d
            y = rng.standard_normal(op(Tensor(x), w, b, s, p).shape)
            return (lambda t: weighted(y)(op(t, w, b, s, p))), x

        return make

    def conv_weight(shape, k, cout, s, p, transpose=False):
        def make(rng):
            x = Tensor(rng.standard_normal(shape))
            w = rng.standard_normal((k, k, shape[2], cout))
            op = ops.conv_transpose2d if transpose else ops.conv2d
            y = rng.standard_normal(op(x, Tensor(w), None, s, p).shape)
            return (lambda t: weighted(y)(op(x, t, None, s, p))), w

        return make

    def leaky(shape):
        def make(rng):
            x = rng.standard_normal(shape)
            x = np.where(np.abs(x) < 0.05, 0.5, x)  # keep clear of the kink
            y = rng.standard_normal(shape)
            return (lambda t: weighted(y)(ops.leaky_relu(t, 0.1))), x

        return make

    def concat(shape, extra):
        def make(rng):
            x = rng.standard_normal(shape)
            other = Tensor(rng.standard_normal(shape[:2] + (extra,)))
            y = rng.standard_normal(shape[:2] + (shape[2] + extra,))
            return (lambda t: weighted(y)(ops.concat_channels(other, t))), x

        return make

    def square(shape):
        def make(rng):
            x = rng.standard_normal(shape)
            return (lambda t: ops.mean(ops.square(ops.sub(ops.mul(t, 1.5), t)))), x

        return make

    return {
        "conv2d": [conv((6, 6, 2), 3, 2, 2, 1), conv((5, 7, 3), 3, 4, 1, 1), conv((4, 4, 1), 1, 2, 1, 0), conv_weight((6, 5, 2), 3, 3, 2, 1)],
        "conv_transpose2d": [conv((4, 4, 2), 4, 3, 2, 1, True), conv((3, 5, 1), 4, 2, 2, 1, True), conv((2, 2, 3), 1, 2, 1, 0, True), conv_weight((3, 3, 2), 4, 2, 2, 1, True)],
        "leaky_relu": [leaky((3, 3, 1)), leaky((4, 2, 3)), leaky((1, 5, 2))],
        "concat_channels": [concat((3, 3, 1), 2), concat((2, 4, 3), 1), concat((1, 1, 2), 4)],
        "elementwise": [square((3, 3, 1)), square((2, 5, 2)), square((4, 1, 3))],
    }


def check_op_gradients(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, makers in _op_cases().items():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for make in makers:
            fn, x = make(rng)
            worst = max(worst, finite_diff_check(fn, x))
        out.append(CheckResult(f"grad-{name}", worst <= GRAD_TOL, worst, GRAD_TOL, f"{len(makers)} shapes"))
    return out


def check_loss_gradients(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    ext = FeatureExtractor(seed=7, dtype=F64)
    results = []
    cases = {
        "grad-mse": lambda S: (lambda R: mse_loss(R, S)),
        "grad-perceptual": lambda S: (lambda R: perceptual_loss(R, S, ext)),
        "grad-deblur-loss": lambda S: (lambda R: deblur_loss(R, S, LossConfig(lambda_perceptual=0.5), ext)),
        "grad-deblur-loss-none": lambda S: (lambda R: deblur_loss(R, S, LossConfig(feature_extractor="none"), None)),
    }
    for name, factory in cases.items():
        worst = 0.0
        for shape in [(4, 4, 3), (8, 4, 3)]:
            S = rng.uniform(0, 1, shape)
            worst = max(worst, finite_diff_check(factory(S), rng.uniform(0, 1, shape)))
        results.append(CheckResult(name, worst <= GRAD_TOL, worst, GRAD_TOL, "2 shapes"))
    return results


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(k=3, base_channels=2, num_stages=2, seed=3, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def unroll_loss(model, frames: np.ndarray, targets: np.ndarray):
    def fn(first: Tensor) -> Tensor:
        total = None
        for t, step in enumerate(model.run_clip([first, *[Tensor(f) for f in frames[1:]]])):
            term = mse_loss(step.R, targets[t])
            total = term if total is None else ops.add(total, term)
        return total

    return fn


def check_model_unroll(seed: int = 0, samples_per_tensor: int = 2) -> CheckResult:
    """Finite differences through a 2-step recurrent unroll of a tiny model."""
    rng = np.random.default_rng(seed)
    model = build_model(tiny_model_config())
    frames = rng.uniform(0, 1, (2, 8, 8, 3))
    targets = rng.uniform(0, 1, (2, 8, 8, 3))
    fn = unroll_loss(model, frames, targets)
    worst = finite_diff_check(fn, frames[0], coords=rng.choice(frames[0].size, 6, replace=False))
    n = 0
    for p in model.parameters():
        coords = rng.choice(p.size, min(samples_per_tensor, p.size), replace=False)
        worst = max(worst, finite_diff_check(fn, frames[0], coords=coords, params=[p]))
        n += 1
    return CheckResult("model-unroll", worst <= GRAD_TOL, worst, GRAD_TOL, f"2 steps, input + {n} parameter tensors")


def run_all(seed: int = 0, include_model: bool = True) -> list[CheckResult]:
    suites: list[Callable[[], CheckResult | list[CheckResult]]] = [
        lambda: check_fac_oracle(seed),
        lambda: check_fac_identity(seed),
        lambda: check_fac_bilinearity(seed),
        lambda: check_fac_adjoint(seed),
        lambda: check_fac_gradient(seed),
        lambda: check_conv_oracle(seed),
        lambda: check_op_gradients(seed),
        lambda: check_loss_gradients(seed),
    ]
    if include_model:
        suites.append(lambda: check_model_unroll(seed))
    results = []
    for suite in suites:
        t0 = time.perf_counter()
        res = suite()
        res = res if isinstance(res, list) else [res]
        dt = time.perf_counter() - t0
        for r in res:
            r.seconds = dt / len(res)
        results.extend(res)
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'check':<24} {'status':<6} {'max error':>11} {'tolerance':>10}  detail"]
    for r in results:
        lines.append(f"{r.name:<24} {'PASS' if r.passed else 'FAIL':<6} {r.value:>11.3e} {r.tolerance:>10.1e}  {r.detail}")
    return "\n".join(lines)
