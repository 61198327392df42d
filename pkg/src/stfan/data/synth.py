"""Synthetic dynamic scenes and box-shutter blur.

A scene is a periodic textured background translated by a global camera
motion, plus sprites (textured rectangles/ellipses) moving and rotating
linearly in time.  Sprite texels are forward-splatted with bilinear weights
so sub-pixel motion still moves mass between pixels.  A blurry frame is the
mean of M sub-frame renders at the midpoints of M equal slices of the unit
inter-frame interval centred on the sharp frame's time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class Sprite:
    shape: str  # "rect" | "ellipse"
    center: tuple[float, float]  # (row, col) at t = 0
    size: tuple[int, int]  # (height, width) in pixels
    velocity: tuple[float, float] = (0.0, 0.0)  # px / frame
    angular_velocity: float = 0.0  # rad / frame
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    texture_seed: int | None = None
    texture_strength: float = 0.0


@dataclass
class SceneSpec:
    height: int
    width: int
    sprites: list[Sprite] = field(default_factory=list)
    background_seed: int | None = 0
    camera_velocity: tuple[float, float] = (0.0, 0.0)
    max_speed: float = 8.0
    supersample: int = 2

    def validate(self, num_frames: int) -> None:
        if not self.sprites and self.background_seed is None:
            raise ValueError("empty scene: no sprites and no background")
        for i, s in enumerate(self.sprites):
            if s.shape not in ("rect", "ellipse"):
                raise ValueError(f"sprite {i}: unknown shape {s.shape!r}")
            if max(abs(s.velocity[0]), abs(s.velocity[1])) > self.max_speed:
                raise ValueError(f"sprite {i}: speed {s.velocity} exceeds max_speed {self.max_speed}")
        if max(abs(self.camera_velocity[0]), abs(self.camera_velocity[1])) > self.max_speed:
            raise ValueError(f"camera speed {self.camera_velocity} exceeds max_speed {self.max_speed}")
        if self.sprites:
            for t in range(num_frames):
                if not any(self._on_canvas(s, t) for s in self.sprites):
                    raise ValueError(f"no sprite intersects the canvas at frame {t}")

    def _on_canvas(self, s: Sprite, t: float) -> bool:
        cy, cx = self.position(s, t)
        half = max(s.size) / 2 + 1
        return -half < cy < self.height + half and -half < cx < self.width + half

    def position(self, s: Sprite, t: float) -> tuple[float, float]:
        return (
            s.center[0] + (s.velocity[0] + self.camera_velocity[0]) * t,
            s.center[1] + (s.velocity[1] + self.camera_velocity[1]) * t,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VideoClip:
    sharp: np.ndarray  # (T, h, w, 3)
    blurry: np.ndarray  # (T, h, w, 3)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sharp.shape != self.blurry.shape:
            raise ValueError(f"sharp {self.sharp.shape} and blurry {self.blurry.shape} sequences differ")

    def __len__(self) -> int:
        return self.sharp.shape[0]

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.sharp).tobytes())
        h.update(np.ascontiguousarray(self.blurry).tobytes())
        return h.hexdigest()


def _texture(shape, seed: int, scale: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noise = rng.random(shape)
    smooth = ndimage.gaussian_filter(noise, sigma=(scale, scale, 0) if len(shape) == 3 else scale, mode="wrap")
    lo, hi = smooth.min(), smooth.max()
    return (smooth - lo) / max(hi - lo, 1e-12)


def background_texture(h: int, w: int, seed: int) -> np.ndarray:
    """Periodic background: smooth colour noise plus hard-edged stripes and blocks."""
    rng = np.random.default_rng(seed)
    base = _texture((h, w, 3), int(rng.integers(2**31)), scale=1.5)
    yy, xx = np.mgrid[0:h, 0:w]
    period = int(rng.integers(6, 14))
    angle = rng.uniform(0, np.pi)
    stripes = (np.floor((yy * np.cos(angle) + xx * np.sin(angle)) / period) % 2)[..., None]
    blocks = ndimage.zoom(rng.random((max(h // 8, 1), max(w // 8, 1), 1)), (8, 8, 1), order=0, mode="grid-wrap", grid_mode=True)[:h, :w]
    tex = 0.35 * base + 0.4 * stripes * rng.random(3) + 0.25 * blocks
    return np.clip(tex, 0.0, 1.0)


def _sample_shifted(tex: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Bilinear sample of a periodic texture translated by (dy, dx)."""
    h, w = tex.shape[:2]
    iy, fy = int(np.floor(dy)), dy - np.floor(dy)
    ix, fx = int(np.floor(dx)), dx - np.floor(dx)
    # out[y, x] = tex[y - dy, x - dx]
    a = np.roll(tex, (iy, ix), axis=(0, 1))
    b = np.roll(tex, (iy + 1, ix), axis=(0, 1))
    c = np.roll(tex, (iy, ix + 1), axis=(0, 1))
    d = np.roll(tex, (iy + 1, ix + 1), axis=(0, 1))
    return (1 - fy) * (1 - fx) * a + fy * (1 - fx) * b + (1 - fy) * fx * c + fy * fx * d


class _SpriteRaster:
    """Texel cloud of one sprite in its local frame (sub-pixel spacing)."""

    def __init__(self, s: Sprite, supersample: int):
        hh, ww = s.size
        step = 1.0 / supersample
        ly = (np.arange(hh * supersample) + 0.5) * step - hh / 2
        lx = (np.arange(ww * supersample) + 0.5) * step - ww / 2
        gy, gx = np.meshgrid(ly, lx, indexing="ij")
        if s.shape == "ellipse":
            mask = (gy / (hh / 2)) ** 2 + (gx / (ww / 2)) ** 2 <= 1.0
        else:
            mask = np.ones_like(gy, dtype=bool)
        color = np.broadcast_to(np.asarray(s.color, dtype=np.float64), gy.shape + (3,)).copy()
        if s.texture_seed is not None and s.texture_strength > 0:
            tex = _texture(gy.shape + (3,), s.texture_seed, scale=0.8 * supersample)
            color = np.clip((1 - s.texture_strength) * color + s.texture_strength * tex, 0, 1)
        self.ly, self.lx = gy[mask], gx[mask]
        self.color = color[mask]
        self.weight = 1.0 / supersample**2


def _splat(h: int, w: int, ys: np.ndarray, xs: np.ndarray, values: np.ndarray, weight: float):
    """Bilinear forward splat; returns (sum of weights, weighted value sum)."""
    # pixel (i, j) has its centre at (i, j); a texel at y feeds rows floor(y) and floor(y) + 1
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    yy = np.concatenate([y0, y0 + 1, y0, y0 + 1])
    xx = np.concatenate([x0, x0, x0 + 1, x0 + 1])
    wt = np.concatenate([(1 - fy) * (1 - fx), fy * (1 - fx), (1 - fy) * fx, fy * fx]) * weight
    ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    idx = yy[ok] * w + xx[ok]
    wt = wt[ok]
    vals = np.tile(values, (4, 1))[ok]
    acc_w = np.bincount(idx, weights=wt, minlength=h * w)
    acc_c = np.stack([np.bincount(idx, weights=wt * vals[:, ch], minlength=h * w) for ch in range(values.shape[1])], axis=1)
    # bincount of an empty selection comes back as int64
    return acc_w.reshape(h, w).astype(np.float64), acc_c.reshape(h, w, values.shape[1]).astype(np.float64)


class Renderer:
    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.bg = background_texture(spec.height, spec.width, spec.background_seed) if spec.background_seed is not None else None
        self.rasters = [_SpriteRaster(s, spec.supersample) for s in spec.sprites]

    def render(self, t: float) -> np.ndarray:
        spec = self.spec
        h, w = spec.height, spec.width
        if self.bg is None:
            img = np.zeros((h, w, 3))
        else:
            img = _sample_shifted(self.bg, spec.camera_velocity[0] * t, spec.camera_velocity[1] * t)
        for s, ras in zip(spec.sprites, self.rasters):
            cy, cx = spec.position(s, t)
            th = s.angular_velocity * t
            cos, sin = np.cos(th), np.sin(th)
            ys = cy + cos * ras.ly - sin * ras.lx
            xs = cx + sin * ras.ly + cos * ras.lx
            acc_w, acc_c = _splat(h, w, ys, xs, ras.color, ras.weight)
            alpha = np.minimum(acc_w, 1.0)[..., None]
            col = np.divide(acc_c, acc_w[..., None], out=np.zeros_like(acc_c), where=acc_w[..., None] > 0)
            img = img * (1.0 - alpha) + alpha * col
        return img


def subframe_times(t: float, m: int) -> np.ndarray:
    return t + (np.arange(m) - (m - 1) / 2) / m


def render_clip(spec: SceneSpec, num_frames: int, subframes_per_frame: int, dtype=np.float32) -> VideoClip:
    if subframes_per_frame < 1:
        raise ValueError(f"subframes_per_frame must be >= 1, got {subframes_per_frame}")
    spec.validate(num_frames)
    renderer = Renderer(spec)
    sharp, blurry = [], []
    for t in range(num_frames):
        sharp.append(renderer.render(float(t)))
        subs = [renderer.render(float(tau)) for tau in subframe_times(t, subframes_per_frame)]
        if all(np.array_equal(subs[0], s) for s in subs[1:]):
            blurry.append(subs[0])
        else:
            blurry.append(np.mean(subs, axis=0))
    meta = {
        "height": spec.height,
        "width": spec.width,
        "num_frames": num_frames,
        "subframes": subframes_per_frame,
        "scene": spec.to_dict(),
    }
    return VideoClip(
        np.clip(np.stack(sharp), 0, 1).astype(dtype),
        np.clip(np.stack(blurry), 0, 1).astype(dtype),
        meta,
    )


def random_scene(rng: np.random.Generator, height: int, width: int, num_frames: int, max_speed: float = 6.0, num_sprites=(2, 4)) -> SceneSpec:
    """Draw a scene whose first sprite stays on the canvas for the whole clip."""
    n = int(rng.integers(num_sprites[0], num_sprites[1] + 1))
    cam = tuple(float(v) for v in rng.uniform(-0.5, 0.5, 2) * max_speed)
    sprites = []
    for i in range(n):
        size = (int(rng.integers(height // 6, height // 2 + 1)), int(rng.integers(width // 6, width // 2 + 1)))
        speed = rng.uniform(0.3, 1.0) * max_speed
        angle = rng.uniform(0, 2 * np.pi)
        vel = (float(speed * np.sin(angle)), float(speed * np.cos(angle)))
        if i == 0:
            # start so the mid-clip position is central
            mid = (num_frames - 1) / 2
            center = (height / 2 - (vel[0] + cam[0]) * mid, width / 2 - (vel[1] + cam[1]) * mid)
        else:
            center = (float(rng.uniform(0, height)), float(rng.uniform(0, width)))
        sprites.append(
            Sprite(
                shape=str(rng.choice(["rect", "ellipse"])),
                center=(float(center[0]), float(center[1])),
                size=size,
                velocity=vel,
                angular_velocity=float(rng.uniform(-0.08, 0.08)),
                color=tuple(float(v) for v in rng.random(3)),
                texture_seed=int(rng.integers(2**31)),
                texture_strength=float(rng.uniform(0.3, 0.8)),
            )
        )
    return SceneSpec(height, width, sprites, int(rng.integers(2**31)), cam, max_speed=max_speed)
