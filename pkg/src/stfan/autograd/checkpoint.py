"""Checkpoint format: JSON manifest plus a sibling raw little-endian buffer file."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: Mapping[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write ``path`` (manifest JSON) and ``path.with_suffix('.bin')``."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            dtype = arr.dtype.name
            if dtype not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {dtype} for tensor {name!r}")
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format": "stfan-checkpoint/1", "data_file": bin_path.name, "tensors": entries}
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (name -> array, manifest)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {path}")
    manifest = json.loads(path.read_text())
    blob = (path.parent / manifest["data_file"]).read_bytes()
    out = {}
    for e in manifest["tensors"]:
        start, n = e["offset"], e["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(f"tensor {e['name']!r} runs past the end of {manifest['data_file']}")
        arr = np.frombuffer(blob[start : start + n], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        out[e["name"]] = arr.astype(e["dtype"])
    return out, manifest
