import struct
import zlib

import numpy as np
import pytest

from stfan.data import (
    AugmentConfig,
    FrameIOError,
    SceneSpec,
    Sprite,
    augment,
    dataset_stream,
    identity_augment,
    iter_frames,
    make_clip,
    prefetch,
    random_scene,
    read_frames,
    render_clip,
    write_frames,
)
from stfan.data.augment import apply_transform, sample_transform
from stfan.data.synth import VideoClip, subframe_times


def delta_scene(velocity, size=(17, 17), at=(8.0, 8.0)):
    dot = Sprite("rect", at, (1, 1), velocity=velocity, color=(1.0, 1.0, 1.0))
    return SceneSpec(size[0], size[1], [dot], background_seed=None, max_speed=8.0, supersample=1)


def line_kernel_image(shape, center, velocity, m):
    """Uniform M-tap line kernel applied to a unit impulse, tap by tap."""
    out = np.zeros(shape)
    for tau in (np.arange(m) - (m - 1) / 2) / m:
        y = center[0] + velocity[0] * tau
        x = center[1] + velocity[1] * tau
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                out[y0 + dy, x0 + dx] += wy * wx / m
    return out


# ---- blur synthesis ---------------------------------------------------------


def test_subframe_times_span_the_interval():
    np.testing.assert_allclose(subframe_times(3.0, 4), [2.625, 2.875, 3.125, 3.375])
    assert subframe_times(2.0, 1).tolist() == [2.0]


def test_delta_pixel_matches_line_kernel():
    clip = render_clip(delta_scene((0.0, 4.0)), 1, 8, dtype=np.float64)
    expected = line_kernel_image((17, 17), (8.0, 8.0), (0.0, 4.0), 8)
    for ch in range(3):
        np.testing.assert_allclose(clip.blurry[0, ..., ch], expected, atol=1e-6, rtol=0)
    assert clip.sharp[0, 8, 8, 0] == 1.0 and clip.sharp[0].sum() == 3.0
    row = clip.blurry[0, 8, :, 0]
    assert row.sum() == pytest.approx(1.0) and np.flatnonzero(row).tolist() == [6, 7, 8, 9, 10]


def test_delta_pixel_integer_taps():
    # 8 px/frame over 8 subframes: whole-pixel steps, each tap split over two columns
    clip = render_clip(delta_scene((0.0, 8.0), size=(9, 24), at=(4.0, 11.0)), 1, 8, dtype=np.float64)
    expected = line_kernel_image((9, 24), (4.0, 11.0), (0.0, 8.0), 8)
    np.testing.assert_allclose(clip.blurry[0, ..., 0], expected, atol=1e-6, rtol=0)
    np.testing.assert_allclose(clip.blurry[0, 4, 7:16, 0], [1 / 16] + [1 / 8] * 7 + [1 / 16], atol=1e-12)


@pytest.mark.parametrize("m", [1, 2, 5, 8])
def test_static_scene_is_a_fixed_point(m):
    scene = random_scene(np.random.default_rng(m), 24, 24, 4)
    scene.camera_velocity = (0.0, 0.0)
    for s in scene.sprites:
        s.velocity, s.angular_velocity = (0.0, 0.0), 0.0
    clip = render_clip(scene, 4, m)
    assert clip.blurry.tobytes() == clip.sharp.tobytes()


def test_single_subframe_gives_sharp():
    clip = render_clip(random_scene(np.random.default_rng(3), 24, 24, 3), 3, 1)
    assert np.array_equal(clip.blurry, clip.sharp)


def max_gradient(frames):
    return max(np.abs(np.diff(frames, axis=1)).max(), np.abs(np.diff(frames, axis=2)).max())


@pytest.mark.parametrize("seed", range(6))
def test_doubling_subframes_never_sharpens(seed):
    # whole-pixel subframe displacements, so every render is an exact roll of the texture
    rng = np.random.default_rng(seed)
    vel = tuple(float(v) for v in rng.choice([-8.0, 0.0, 8.0], 2))
    vel = vel if any(vel) else (8.0, 0.0)
    scene = SceneSpec(24, 24, [], int(rng.integers(1000)), vel, max_speed=8.0)
    grads = [max_gradient(render_clip(scene, 2, m, dtype=np.float64).blurry) for m in (1, 2, 4)]
    assert grads[1] <= grads[0] + 1e-12 and grads[2] <= grads[1] + 1e-12


def test_camera_motion_conserves_mean():
    scene = SceneSpec(24, 24, [], 5, (2.3, -3.7), max_speed=8.0)
    clip = render_clip(scene, 3, 6, dtype=np.float64)
    np.testing.assert_allclose(clip.blurry.mean(axis=(1, 2)), clip.sharp.mean(axis=(1, 2)), atol=1e-12)


def test_scene_validation():
    with pytest.raises(ValueError, match="empty scene"):
        render_clip(SceneSpec(8, 8, [], background_seed=None), 2, 2)
    with pytest.raises(ValueError, match="max_speed"):
        render_clip(delta_scene((0.0, 9.0)), 2, 2)
    with pytest.raises(ValueError, match="no sprite"):
        render_clip(SceneSpec(8, 8, [Sprite("rect", (4.0, 4.0), (1, 1), velocity=(0.0, 8.0))], max_speed=8.0), 3, 2)
    with pytest.raises(ValueError, match="subframes"):
        render_clip(delta_scene((0.0, 1.0)), 1, 0)


def test_random_scene_clip_contract():
    clip = render_clip(random_scene(np.random.default_rng(4), 32, 40, 6), 6, 4)
    assert clip.sharp.shape == clip.blurry.shape == (6, 32, 40, 3)
    assert clip.sharp.min() >= 0 and clip.blurry.max() <= 1
    with pytest.raises(ValueError):
        VideoClip(clip.sharp, clip.blurry[:3])


# ---- augmentation -------------------------------------------------------------


def source_clip(seed=0, h=40, w=40, n=4):
    return render_clip(random_scene(np.random.default_rng(seed), h, w, n), n, 4)


def test_identity_draw_is_a_centred_crop():
    clip = source_clip()
    out = augment(clip, identity_augment((32, 32)), np.random.default_rng(0))
    np.testing.assert_array_equal(out.sharp, clip.sharp[:, 4:36, 4:36])
    np.testing.assert_array_equal(out.blurry, clip.blurry[:, 4:36, 4:36])


def test_reversal_is_an_involution():
    clip = source_clip(1)
    cfg = identity_augment((40, 40))
    cfg.reverse_prob = 1.0
    once = augment(clip, cfg, np.random.default_rng(5))
    assert once.meta["augment"]["reverse"]
    np.testing.assert_array_equal(once.sharp, clip.sharp[::-1])
    twice = augment(once, cfg, np.random.default_rng(6))
    np.testing.assert_array_equal(twice.sharp, clip.sharp)
    np.testing.assert_array_equal(twice.blurry, clip.blurry)


def test_one_transform_per_clip():
    clip = source_clip(2)
    cfg = AugmentConfig(crop_size=(32, 32), noise_sigma=0.0, reverse_prob=0.0)
    out = augment(clip, cfg, np.random.default_rng(9))
    tf = out.meta["augment"]
    for t in range(len(clip)):
        np.testing.assert_array_equal(out.sharp[t], apply_transform(clip.sharp[t], tf).astype(out.sharp.dtype))
        np.testing.assert_array_equal(out.blurry[t], apply_transform(clip.blurry[t], tf).astype(out.blurry.dtype))


def test_noise_statistics_and_targets_stay_clean():
    # mid-grey frames keep clamping out of the picture at sigma 0.1
    n, h, w = 10, 60, 60
    grey = np.full((n, h, w, 3), 0.5)
    clip = VideoClip(grey.copy(), grey.copy(), {})
    cfg = AugmentConfig(crop_size=(h, w), chroma_range=(1.0, 1.0), flip_h=False, flip_v=False, reverse_prob=0.0, crop_mode="center")
    out = augment(clip, cfg, np.random.default_rng(0))
    diff = out.blurry - 0.5
    assert diff.size >= 10**5
    assert abs(diff.var() - 0.01) <= 0.001
    np.testing.assert_array_equal(out.sharp, grey)


def test_crop_larger_than_frame():
    with pytest.raises(ValueError, match="larger than frame"):
        sample_transform((16, 16, 3), AugmentConfig(crop_size=(32, 32)), np.random.default_rng(0))


@pytest.mark.parametrize("kw", [{"chroma_range": (0.0, 1.0)}, {"noise_sigma": -1.0}, {"reverse_prob": 2.0}, {"crop_mode": "edge"}])
def test_augment_config_validation(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)


def test_crop_divisibility():
    AugmentConfig(crop_size=(32, 32)).check_divisible(8)
    with pytest.raises(ValueError, match="divisible"):
        AugmentConfig(crop_size=(36, 32)).check_divisible(8)


# ---- stream -------------------------------------------------------------------------


def stream_checksums(seed, count=3):
    return [c.checksum() for c in dataset_stream(seed, 4, count, AugmentConfig(crop_size=(16, 16)))]


def test_stream_is_deterministic():
    assert stream_checksums(7) == stream_checksums(7)


def test_stream_seeds_differ():
    assert stream_checksums(7, 1) != stream_checksums(8, 1)


def test_splits_are_disjoint():
    cfg = identity_augment((16, 16))
    assert make_clip(0, 0, 3, cfg, "train").checksum() != make_clip(0, 0, 3, cfg, "heldout").checksum()


def test_stream_range_and_length():
    clips = list(dataset_stream(1, 6, 4, AugmentConfig(crop_size=(16, 16))))
    assert len(clips) == 4
    for c in clips:
        assert len(c) == 6 and c.sharp.min() >= 0 and c.blurry.max() <= 1


def test_stream_rejects_empty():
    with pytest.raises(ValueError):
        list(dataset_stream(0, 4, 0, AugmentConfig()))


def test_prefetch_preserves_order_and_errors():
    assert list(prefetch(iter(range(20)), 3)) == list(range(20))
    assert list(prefetch(iter(range(5)), 0)) == list(range(5))

    def broken():
        yield 1
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="boom"):
        list(prefetch(broken(), 2))


# ---- PNG I/O ----------------------------------------------------------------------


def test_png_round_trip(tmp_path):
    frames = np.random.default_rng(0).random((3, 8, 10, 3))
    assert write_frames(tmp_path, frames) == 3
    back = read_frames(tmp_path)
    assert back.shape == frames.shape
    assert np.abs(back - frames).max() <= 1 / 510 + 1e-7


def test_frames_read_in_index_order(tmp_path):
    frames = np.random.default_rng(1).random((12, 4, 4, 3))
    write_frames(tmp_path, frames)
    assert [i for i, _ in iter_frames(tmp_path)] == list(range(12))


def test_misnamed_and_missing(tmp_path):
    with pytest.raises(FrameIOError, match="not found"):
        read_frames(tmp_path / "nope")
    with pytest.raises(FrameIOError, match="no frame_"):
        read_frames(tmp_path)
    write_frames(tmp_path, np.zeros((1, 4, 4, 3)))
    (tmp_path / "frame_1.png").write_bytes((tmp_path / "frame_00000.png").read_bytes())
    with pytest.raises(FrameIOError, match="misnamed"):
        read_frames(tmp_path)


def png_bytes(width, height, depth, colour, raw_rows):
    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", width, height, depth, colour, 0, 0, 0)
    body = b"".join(b"\x00" + row for row in raw_rows)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(body)) + chunk(b"IEND", b"")


def test_sixteen_bit_png_rejected(tmp_path):
    (tmp_path / "frame_00000.png").write_bytes(png_bytes(2, 2, 16, 2, [b"\x12\x34" * 6] * 2))
    with pytest.raises(FrameIOError, match="bit depth 16"):
        read_frames(tmp_path)


def test_greyscale_png_rejected(tmp_path):
    (tmp_path / "frame_00000.png").write_bytes(png_bytes(2, 2, 8, 0, [b"\x10\x20"] * 2))
    with pytest.raises(FrameIOError, match="colour type 0"):
        read_frames(tmp_path)


def test_non_png_rejected(tmp_path):
    (tmp_path / "frame_00000.png").write_bytes(b"not an image at all, just text padding it out")
    with pytest.raises(FrameIOError, match="not a PNG"):
        read_frames(tmp_path)
