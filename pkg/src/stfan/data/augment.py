"""Per-sequence augmentation and the synthetic clip stream."""

from __future__ import annotations

import queue
import threading
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .synth import VideoClip, random_scene, render_clip

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    chroma_range: tuple[float, float] = (0.8, 1.2)
    crop_size: tuple[int, int] = (32, 32)
    flip_h: bool = True
    flip_v: bool = True
    noise_sigma: float = 0.1
    reverse_prob: float = 0.5
    crop_mode: str = "random"  # "random" | "center"
    seed: int = 0

    def __post_init__(self):
        self.chroma_range = tuple(self.chroma_range)
        self.crop_size = tuple(self.crop_size)
        lo, hi = self.chroma_range
        if lo <= 0 or hi < lo:
            raise ValueError(f"chroma_range must be positive and ordered, got {self.chroma_range}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.reverse_prob <= 1:
            raise ValueError(f"reverse_prob must lie in [0, 1], got {self.reverse_prob}")
        if self.crop_mode not in ("random", "center"):
            raise ValueError(f"crop_mode must be 'random' or 'center', got {self.crop_mode!r}")

    def check_divisible(self, divisor: int) -> None:
        if self.crop_size[0] % divisor or self.crop_size[1] % divisor:
            raise ValueError(f"crop_size {self.crop_size} must be divisible by {divisor}")

    def to_dict(self) -> dict:
        return asdict(self)


def identity_augment(crop_size) -> AugmentConfig:
    return AugmentConfig(chroma_range=(1.0, 1.0), crop_size=crop_size, flip_h=False, flip_v=False, noise_sigma=0.0, reverse_prob=0.0, crop_mode="center")


def sample_transform(shape, config: AugmentConfig, rng: np.random.Generator) -> dict:
    """Draw one transform for a whole clip of frames shaped (h, w, 3)."""
    h, w = shape[:2]
    ch, cw = config.crop_size
    if ch > h or cw > w:
        raise ValueError(f"crop {config.crop_size} larger than frame {(h, w)}")
    lo, hi = config.chroma_range
    if config.crop_mode == "center":
        top, left = (h - ch) // 2, (w - cw) // 2
    else:
        top, left = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
    return {
        "brightness": float(rng.uniform(lo, hi)),
        "contrast": float(rng.uniform(lo, hi)),
        "saturation": float(rng.uniform(lo, hi)),
        "flip_h": bool(config.flip_h and rng.random() < 0.5),
        "flip_v": bool(config.flip_v and rng.random() < 0.5),
        "reverse": bool(rng.random() < config.reverse_prob),
        "top": top,
        "left": left,
        "crop": [ch, cw],
    }


def apply_transform(frame: np.ndarray, tf: dict) -> np.ndarray:
    """Crop, flip, then brightness (additive), contrast (about the mean luma),
    saturation (blend with luma).  Factors of 1 leave the frame untouched."""
    ch, cw = tf["crop"]
    x = frame[tf["top"] : tf["top"] + ch, tf["left"] : tf["left"] + cw]
    if tf["flip_h"]:
        x = x[:, ::-1]
    if tf["flip_v"]:
        x = x[::-1]
    x = np.array(x, dtype=np.float64)
    if tf["brightness"] != 1.0:
        x = x + (tf["brightness"] - 1.0)
    if tf["contrast"] != 1.0:
        m = float((x @ LUMA).mean())
        x = m + tf["contrast"] * (x - m)
    if tf["saturation"] != 1.0:
        g = (x @ LUMA)[..., None]
        x = g + tf["saturation"] * (x - g)
    if tf["brightness"] != 1.0 or tf["contrast"] != 1.0 or tf["saturation"] != 1.0:
        x = np.clip(x, 0.0, 1.0)
    return x


def augment(clip: VideoClip, config: AugmentConfig, rng: np.random.Generator) -> VideoClip:
    """One transform draw per clip, applied to every frame; noise on inputs only."""
    tf = sample_transform(clip.sharp.shape[1:], config, rng)
    dtype = clip.sharp.dtype
    sharp = np.stack([apply_transform(f, tf) for f in clip.sharp])
    blurry = np.stack([apply_transform(f, tf) for f in clip.blurry])
    if tf["reverse"]:
        sharp, blurry = sharp[::-1], blurry[::-1]
    if config.noise_sigma > 0:
        blurry = np.clip(blurry + rng.normal(0.0, config.noise_sigma, blurry.shape), 0.0, 1.0)
    meta = dict(clip.meta)
    meta["augment"] = tf
    meta["noise_sigma"] = config.noise_sigma
    return VideoClip(np.ascontiguousarray(sharp, dtype=dtype), np.ascontiguousarray(blurry, dtype=dtype), meta)


SPLITS = {"train": 0, "heldout": 1}


def clip_rng(generator_seed: int, index: int, split: str = "train") -> np.random.Generator:
    """Independent generator per clip; the split tag reserves disjoint seed streams."""
    return np.random.default_rng(np.random.SeedSequence([generator_seed, SPLITS[split], index]))


def make_clip(
    generator_seed: int,
    index: int,
    clip_length: int,
    augment_config: AugmentConfig,
    split: str = "train",
    subframes: int = 8,
    margin: int = 16,
    max_speed: float = 6.0,
) -> VideoClip:
    rng = clip_rng(generator_seed, index, split)
    ch, cw = augment_config.crop_size
    h, w = ch + margin, cw + margin
    scene = random_scene(rng, h, w, clip_length, max_speed=max_speed)
    clip = augment(render_clip(scene, clip_length, subframes), augment_config, rng)
    clip.meta.update(generator_seed=generator_seed, index=index, split=split)
    return clip


def dataset_stream(
    generator_seed: int,
    clip_length: int,
    count: int,
    augment_config: AugmentConfig,
    split: str = "train",
    subframes: int = 8,
    max_speed: float = 6.0,
    start: int = 0,
) -> Iterator[VideoClip]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    for i in range(start, start + count):
        yield make_clip(generator_seed, i, clip_length, augment_config, split, subframes, max_speed=max_speed)


def prefetch(items: Iterator, size: int = 2) -> Iterator:
    """Run ``items`` in a producer thread behind a bounded queue (order preserved)."""
    if size <= 0:
        yield from items
        return
    q: queue.Queue = queue.Queue(maxsize=size)
    done = object()

    def produce():
        try:
            for item in items:
                q.put(item)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
        q.put(done)

    threading.Thread(target=produce, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item
