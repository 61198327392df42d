"""Frame-recurrent deblurring network built around two FAC layers.

One step consumes the current blurry frame and the recurrent state
(previous blurry frame, previous restored frame, previous deblurred
features) and produces the restored frame plus the next state::

    E_t      = features(B_t)
    T_t      = encoder(B_{t-1}, R_{t-1}, B_t)
    F_align  = g_align(T_t)
    F_deblur = g_deblur(T_t, F_align)
    C_t      = [FAC(H_{t-1}, F_align), FAC(E_t, F_deblur)]
    R_t      = B_t + reconstruct(C_t)
    H_t      = conv(C_t)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import ops
from .autograd.ops import ShapeError
from .autograd.tensor import Tensor
from .fac import FilterBank, fac
from .nn import Conv2d, ConvTranspose2d, LeakyReLU, Module, ResBlock, Sequential, union

VARIANTS = (
    "full",
    "no-align-fac",
    "no-deblur-fac",
    "no-both-fac",
    "drop-align-branch",
    "drop-deblur-branch",
    "pair-input-BB",
    "pair-input-RB",
)


# init damping for layers with no activation after them
LINEAR_GAIN = 2**-0.5
OUTPUT_GAIN = 0.1


class NonFiniteActivation(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    k: int = 5
    base_channels: int = 16
    num_stages: int = 3
    leaky_slope: float = 0.1
    seed: int = 0
    variant: str = "full"
    residual: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and positive, got {self.k}")
        if self.num_stages < 1:
            raise ValueError(f"num_stages must be >= 1, got {self.num_stages}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be positive, got {self.base_channels}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def divisor(self) -> int:
        return 2**self.num_stages

    def widths(self) -> list[int]:
        return [self.base_channels * 2**s for s in range(self.num_stages)]

    @property
    def fac_channels(self) -> int:
        return self.widths()[-1]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RecurrentState:
    H_prev: Tensor
    B_prev: Tensor
    R_prev: Tensor


@dataclass
class StepOutput:
    R: Tensor
    state: RecurrentState
    diagnostics: dict = field(default_factory=dict)


def _pyramid(cin: int, widths: list[int], slope: float, rng, dtype) -> Sequential:
    layers: list[Module] = []
    for w in widths:
        layers += [
            Conv2d(cin, w, 3, stride=2, rng=rng, dtype=dtype),
            LeakyReLU(slope),
            ResBlock(w, rng=rng, slope=slope, dtype=dtype),
            ResBlock(w, rng=rng, slope=slope, dtype=dtype),
        ]
        cin = w
    return Sequential(*layers)


def _generator(cin: int, c: int, k: int, slope: float, rng, dtype) -> Sequential:
    return Sequential(
        Conv2d(cin, c, 3, rng=rng, dtype=dtype),
        LeakyReLU(slope),
        ResBlock(c, rng=rng, slope=slope, dtype=dtype),
        ResBlock(c, rng=rng, slope=slope, dtype=dtype),
        # linear head; taps start near 1/k so a k x k window roughly preserves scale
        Conv2d(c, c * k * k, 1, rng=rng, gain=1.0 / k, dtype=dtype),
    )


class STFAN(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        cfg = config
        v = cfg.variant
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        widths = cfg.widths()
        c, k, slope = cfg.fac_channels, cfg.k, cfg.leaky_slope

        self.align_branch = v != "drop-align-branch"
        self.deblur_branch = v != "drop-deblur-branch"
        self.align_fac = self.align_branch and v not in ("no-align-fac", "no-both-fac")
        self.deblur_fac = self.deblur_branch and v not in ("no-deblur-fac", "no-both-fac")
        # F_align also feeds g_deblur, so g_align survives while either FAC is active
        self.needs_align_filters = self.align_fac or self.deblur_fac
        self.triplet = {"pair-input-BB": ("B_prev", "B_t"), "pair-input-RB": ("R_prev", "B_t")}.get(
            v, ("B_prev", "R_prev", "B_t")
        )

        # construction order fixes the RNG stream and therefore the parameters
        self.features = _pyramid(3, widths, slope, rng, dtype) if self.deblur_branch else None
        if self.needs_align_filters:
            self.encoder = _pyramid(3 * len(self.triplet), widths, slope, rng, dtype)
            self.g_align = _generator(c, c, k, slope, rng, dtype)
        else:
            self.encoder = self.g_align = None
        self.g_deblur = _generator(c + c * k * k, c, k, slope, rng, dtype) if self.deblur_fac else None

        c_fused = c * (int(self.align_branch) + int(self.deblur_branch))
        self.c_fused = c_fused
        self.h_conv = Conv2d(c_fused, c, 3, rng=rng, gain=LINEAR_GAIN, dtype=dtype) if self.align_branch else None

        recon: list[Module] = []
        cin = c_fused
        for s in reversed(range(cfg.num_stages)):
            cout = widths[s - 1] if s > 0 else widths[0]
            recon += [
                ConvTranspose2d(cin, cout, 4, 2, 1, rng=rng, dtype=dtype),
                LeakyReLU(slope),
                ResBlock(cout, rng=rng, slope=slope, dtype=dtype),
                ResBlock(cout, rng=rng, slope=slope, dtype=dtype),
            ]
            cin = cout
        recon.append(Conv2d(cin, 3, 3, rng=rng, gain=OUTPUT_GAIN, dtype=dtype))
        self.reconstruct = Sequential(*recon)
        self._check_ladder()

    def _check_ladder(self) -> None:
        d = self.config.divisor
        for n in (d, 2 * d):
            down = n // d
            if self.reconstruct.out_extent(down) != n:
                raise ValueError(f"reconstruction ladder maps {down} -> {self.reconstruct.out_extent(down)}, expected {n}")

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"state dict mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)

    def astype(self, dtype) -> "STFAN":
        """Convert parameters in place (fp64 for gradient verification)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self.config.dtype = np.dtype(dtype).name
        return self

    # ---- inference -------------------------------------------------------

    def _check_frame(self, x: Tensor, what: str) -> None:
        d = self.config.divisor
        if x.ndim != 3 or x.shape[2] != 3:
            raise ShapeError(f"{what} must be an (h, w, 3) image, got {x.shape}")
        if x.shape[0] % d or x.shape[1] % d:
            raise ShapeError(f"{what} extents {x.shape[:2]} must be divisible by {d}")

    def init_state(self, B0) -> RecurrentState:
        B0 = B0 if isinstance(B0, Tensor) else Tensor(np.asarray(B0, dtype=self.dtype))
        self._check_frame(B0, "B_0")
        d = self.config.divisor
        h, w = B0.shape[0] // d, B0.shape[1] // d
        H = Tensor(np.zeros((h, w, self.config.fac_channels), dtype=self.dtype))
        return RecurrentState(H_prev=H, B_prev=B0, R_prev=B0)

    def generate_filters(self, B_prev: Tensor, R_prev: Tensor, B_t: Tensor, check=None):
        """Return (F_align, F_deblur, T_t); F_deblur is None when g_deblur is absent."""
        for name, t in (("B_prev", B_prev), ("R_prev", R_prev), ("B_t", B_t)):
            self._check_frame(t, name)
            if t.shape != B_t.shape:
                raise ShapeError(f"{name} shape {t.shape} != B_t shape {B_t.shape}")
        frames = {"B_prev": B_prev, "R_prev": R_prev, "B_t": B_t}
        T = self.encoder(ops.concat_channels(*(frames[n] for n in self.triplet)), check, "encoder")
        F_align = self.g_align(T, check, "g_align")
        F_deblur = None
        if self.g_deblur is not None:
            F_deblur = self.g_deblur(ops.concat_channels(T, F_align), check, "g_deblur")
        k = self.config.k
        return FilterBank(F_align, k), (FilterBank(F_deblur, k) if F_deblur is not None else None), T

    def forward_step(self, B_t, state: RecurrentState, capture: bool = False, banks=None, check_finite: bool = True) -> StepOutput:
        """One recurrent step.

        ``banks`` = (F_align, F_deblur) overrides the generated filters (either
        may be None to keep the generated one); used for receptive-field
        probes and identity-bank experiments.
        """
        B_t = B_t if isinstance(B_t, Tensor) else Tensor(np.asarray(B_t, dtype=self.dtype))
        self._check_frame(B_t, "B_t")
        if state.B_prev.shape != B_t.shape:
            raise ShapeError(f"state frames {state.B_prev.shape} do not match B_t {B_t.shape}")
        diag: dict = {}

        def check(name, x):
            if check_finite and not np.isfinite(x.data).all():
                raise NonFiniteActivation(f"non-finite activation in layer {name}")

        F_align = F_deblur = None
        given_align, given_deblur = banks if banks is not None else (None, None)
        need_gen = (self.align_fac and given_align is None) or (self.deblur_fac and given_deblur is None)
        if need_gen:
            F_align, F_deblur, T = self.generate_filters(state.B_prev, state.R_prev, B_t, check)
            if capture:
                diag["T"] = T
        F_align = given_align or F_align
        F_deblur = given_deblur or F_deblur

        parts = []
        if self.align_branch:
            aligned = fac(state.H_prev, F_align) if self.align_fac else state.H_prev
            parts.append(aligned)
            check("fac_align", aligned)
        if self.deblur_branch:
            E = self.features(B_t, check, "features")
            deblurred = fac(E, F_deblur) if self.deblur_fac else E
            parts.append(deblurred)
            check("fac_deblur", deblurred)
            if capture:
                diag["E"] = E
        C = ops.concat_channels(*parts) if len(parts) > 1 else parts[0]

        out = self.reconstruct(C, check, "reconstruct")
        R = ops.add(B_t, out) if self.config.residual else out
        if self.h_conv is not None:
            H = self.h_conv(C)
            check("h_conv", H)
        else:
            H = state.H_prev
        if capture:
            diag.update(C=C, F_align=F_align, F_deblur=F_deblur)
            if self.align_branch:
                diag["aligned"] = parts[0]
            if self.deblur_branch:
                diag["deblurred"] = parts[-1]
        return StepOutput(R=R, state=RecurrentState(H_prev=H, B_prev=B_t, R_prev=R), diagnostics=diag)

    def run_clip(self, frames, state: RecurrentState | None = None):
        """Unroll over a sequence of frames; yields StepOutputs."""
        for t, B in enumerate(frames):
            B = B if isinstance(B, Tensor) else Tensor(np.asarray(B, dtype=self.dtype))
            if state is None:
                state = self.init_state(B)
            step = self.forward_step(B, state)
            state = step.state
            yield step

    # ---- analytic receptive field ----------------------------------------

    def receptive_interval(self, p: int, n: int, mode: str = "content") -> tuple[int, int]:
        """Input-index interval along one axis that output index ``p`` depends on.

        ``mode="content"`` treats the generated filters as fixed weights (the
        path image content takes through the FAC layers); ``mode="full"`` also
        follows the dependence of the filters on the current frame.
        """
        if mode not in ("content", "full"):
            raise ValueError(f"mode must be 'content' or 'full', got {mode!r}")
        d = self.config.divisor
        if n % d:
            raise ValueError(f"extent {n} must be divisible by {d}")
        m = n // d
        r = self.config.k // 2
        a, b = self.reconstruct.rf(p, p, m)
        hits = [(p, p)] if self.config.residual else []

        def clip(lo, hi):
            return max(lo, 0), min(hi, m - 1)

        def through_encoder(lo, hi):
            return self.encoder.rf(lo, hi, n)

        def g_align_rf(lo, hi):
            return through_encoder(*self.g_align.rf(lo, hi, m))

        if self.deblur_branch:
            e = clip(a - r, b + r) if self.deblur_fac else (a, b)
            hits.append(self.features.rf(*e, n))
        if mode == "full":
            if self.deblur_fac:
                # g_deblur reads concat(T, F_align) over one interval
                t = self.g_deblur.rf(a, b, m)
                hits.append(through_encoder(*t))
                hits.append(g_align_rf(*t))
            if self.align_fac:
                hits.append(g_align_rf(a, b))
        return union(*hits)


def build_model(config: ModelConfig) -> STFAN:
    return STFAN(config)


def build_ablation_variant(config: ModelConfig, variant: str) -> STFAN:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return STFAN(ModelConfig(**{**config.to_dict(), "variant": variant}))


def init_state(model: STFAN, B0) -> RecurrentState:
    return model.init_state(B0)


def forward_step(model: STFAN, B_t, state: RecurrentState, **kw) -> StepOutput:
    return model.forward_step(B_t, state, **kw)


def generate_filters(model: STFAN, B_prev, R_prev, B_t):
    return model.generate_filters(B_prev, R_prev, B_t)
