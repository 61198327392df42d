"""PNG frame directories: ``frame_%05d.png``, 8-bit RGB."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

FRAME_RE = re.compile(r"^frame_(\d{5})\.png$")


class FrameIOError(IOError):
    pass


def frame_paths(dir_path) -> list[Path]:
    d = Path(dir_path)
    if not d.is_dir():
        raise FrameIOError(f"frame directory not found: {d}")
    found = []
    for p in d.iterdir():
        if p.suffix.lower() == ".png":
            m = FRAME_RE.match(p.name)
            if not m:
                raise FrameIOError(f"misnamed frame file {p.name!r} in {d} (expected frame_%05d.png)")
            found.append((int(m.group(1)), p))
    if not found:
        raise FrameIOError(f"no frame_%05d.png files in {d}")
    found.sort()
    return [p for _, p in found]


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_header(path: Path) -> tuple[int, int]:
    """(bit depth, colour type) from the IHDR chunk."""
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise FrameIOError(f"{path.name}: not a PNG file")
    return head[24], head[25]


def read_frame(path) -> np.ndarray:
    path = Path(path)
    depth, colour = _png_header(path)
    # Pillow would silently narrow 16-bit RGB to 8 bits, so check the header first
    if depth != 8 or colour != 2:
        raise FrameIOError(f"{path.name}: expected 8-bit RGB PNG, got bit depth {depth}, colour type {colour}")
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise FrameIOError(f"{path.name}: expected 8-bit RGB PNG, got mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def iter_frames(dir_path) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (index, frame) in ascending index order, one frame in memory at a time."""
    for p in frame_paths(dir_path):
        yield int(FRAME_RE.match(p.name).group(1)), read_frame(p)


def read_frames(dir_path) -> np.ndarray:
    return np.stack([f for _, f in iter_frames(dir_path)])


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_frame(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise FrameIOError(f"expected an (h, w, 3) frame, got {frame.shape}")
    Image.fromarray(to_uint8(frame)).save(path, format="PNG")


def write_frames(dir_path, frames: Iterable[np.ndarray], start: int = 0) -> int:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    n = 0
    for i, f in enumerate(frames, start):
        write_frame(d / f"frame_{i:05d}.png", f)
        n += 1
    return n


def write_clip(out_dir, clip) -> None:
    """sharp/ and blurry/ frame directories plus a meta.json sidecar."""
    out = Path(out_dir)
    write_frames(out / "sharp", clip.sharp)
    write_frames(out / "blurry", clip.blurry)
    (out / "meta.json").write_text(json.dumps(clip.meta, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")
