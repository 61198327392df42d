from .augment import AugmentConfig, augment, clip_rng, dataset_stream, identity_augment, make_clip, prefetch
from .frames import FrameIOError, iter_frames, read_frames, write_clip, write_frames
from .synth import SceneSpec, Sprite, VideoClip, random_scene, render_clip

__all__ = [
    "AugmentConfig",
    "FrameIOError",
    "SceneSpec",
    "Sprite",
    "VideoClip",
    "augment",
    "clip_rng",
    "dataset_stream",
    "identity_augment",
    "iter_frames",
    "make_clip",
    "prefetch",
    "random_scene",
    "read_frames",
    "render_clip",
    "write_clip",
    "write_frames",
]
