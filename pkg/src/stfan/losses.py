"""Training losses and image-quality metrics."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .autograd import ops
from .autograd.init import he_init
from .autograd.ops import ShapeError
from .autograd.tensor import Tensor, no_grad

LUMA = np.array([0.299, 0.587, 0.114])
EXTRACTORS = ("none", "fixed-random-conv")


@dataclass
class LossConfig:
    lambda_perceptual: float = 0.01
    feature_extractor: str = "fixed-random-conv"
    extractor_seed: int = 1234

    def __post_init__(self):
        if self.lambda_perceptual < 0:
            raise ValueError(f"lambda_perceptual must be >= 0, got {self.lambda_perceptual}")
        if self.feature_extractor not in EXTRACTORS:
            raise ValueError(f"feature_extractor must be one of {EXTRACTORS}, got {self.feature_extractor!r}")


class FeatureExtractor:
    """Fixed random conv stack standing in for pretrained VGG features.

    Three [3x3 conv, leaky relu] blocks, stride 2 on the second and third,
    so the output is at 1/4 resolution.  Weights never require gradients.
    """

    def __init__(self, seed: int = 1234, channels=(16, 32, 32), slope: float = 0.1, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.layers = []
        cin = 3
        for i, cout in enumerate(channels):
            w = he_init((3, 3, cin, cout), 9 * cin, rng, dtype=dtype)
            w.requires_grad = False
            self.layers.append((w, 1 if i == 0 else 2))
            cin = cout
        self.out_channels = cin
        self.reduction = 2 ** (len(channels) - 1)

    def astype(self, dtype) -> "FeatureExtractor":
        for w, _ in self.layers:
            w.data = w.data.astype(dtype)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[:2]
        if h % self.reduction or w % self.reduction:
            raise ShapeError(f"perceptual features need extents divisible by {self.reduction}, got {(h, w)}")
        if x.dtype != self.layers[0][0].dtype:
            self.astype(x.dtype)
        for wt, stride in self.layers:
            x = ops.leaky_relu(ops.conv2d(x, wt, None, stride, 1), self.slope)
        return x

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w, _ in self.layers:
            h.update(np.ascontiguousarray(w.data).tobytes())
        return h.hexdigest()


def make_extractor(config: LossConfig) -> FeatureExtractor | None:
    if config.feature_extractor == "none":
        return None
    return FeatureExtractor(config.extractor_seed)


def _as_target(S, like: Tensor) -> Tensor:
    return S if isinstance(S, Tensor) else Tensor(np.asarray(S, dtype=like.dtype))


def mse_loss(R: Tensor, S) -> Tensor:
    S = _as_target(S, R)
    if R.shape != S.shape:
        raise ShapeError(f"mse_loss: shapes {R.shape} and {S.shape} differ")
    return ops.mean(ops.square(ops.sub(R, S)))


def perceptual_loss(R: Tensor, S, extractor: FeatureExtractor, target_features: Tensor | None = None) -> Tensor:
    S = _as_target(S, R)
    if R.shape != S.shape:
        raise ShapeError(f"perceptual_loss: shapes {R.shape} and {S.shape} differ")
    if target_features is None:
        with no_grad():
            target_features = extractor(Tensor(S.data))
    return ops.mean(ops.square(ops.sub(extractor(R), target_features)))


def deblur_loss(R: Tensor, S, config: LossConfig, extractor: FeatureExtractor | None = None) -> Tensor:
    loss = mse_loss(R, S)
    if extractor is None or config.lambda_perceptual == 0:
        return loss
    return ops.add(loss, ops.mul(perceptual_loss(R, S, extractor), config.lambda_perceptual))


def psnr(R, S, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    r = np.asarray(R.data if isinstance(R, Tensor) else R, dtype=np.float64)
    s = np.asarray(S.data if isinstance(S, Tensor) else S, dtype=np.float64)
    if r.shape != s.shape:
        raise ShapeError(f"psnr: shapes {r.shape} and {s.shape} differ")
    mse = float(np.mean((r - s) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 2:
        return img
    raise ShapeError(f"expected an (h, w), (h, w, 1) or (h, w, 3) image, got {img.shape}")


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation
    win = np.lib.stride_tricks.sliding_window_view(img, g.size, axis=0)
    tmp = win @ g
    win = np.lib.stride_tricks.sliding_window_view(tmp, g.size, axis=1)
    return win @ g


def ssim(R, S, peak: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all 'valid' 11x11 Gaussian windows on the luma channel."""
    x = to_gray(R.data if isinstance(R, Tensor) else R)
    y = to_gray(S.data if isinstance(S, Tensor) else S)
    if x.shape != y.shape:
        raise ShapeError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if min(x.shape) < window:
        raise ShapeError(f"ssim: image {x.shape} smaller than the {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window(window, sigma)
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_metric_rows(path, rows) -> None:
    """CSV with columns clip_id, frame, psnr_db, ssim."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "frame", "psnr_db", "ssim"])
        for clip_id, frame, p, s in rows:
            w.writerow([clip_id, frame, format_psnr(p), f"{s:.6f}"])
