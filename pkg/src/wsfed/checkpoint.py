"""Checkpoint file: a text manifest followed by raw little-endian float64 buffers.

::

    WSFED-CHECKPOINT 1\\n
    {manifest JSON on one line}\\n
    <tensor bytes, concatenated in manifest order>

Each manifest tensor entry carries ``name``, ``shape``, ``dtype`` (``<f8``),
``offset`` and ``nbytes``; offsets count from the first byte after the
manifest line.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .arch import SpaceConfig

MAGIC = b"WSFED-CHECKPOINT 1\n"
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def write_checkpoint(
    path: Union[str, Path],
    space: SpaceConfig,
    params: Mapping[str, np.ndarray],
    meta: Dict[str, Any],
) -> None:
    tensors = []
    offset = 0
    for name, arr in params.items():
        nbytes = arr.size * 8
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = {"space": space.to_dict(), "tensors": tensors, **meta}
    line = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode() + b"\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(line)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype=DTYPE).tobytes())
    os.replace(tmp, path)


def read_checkpoint(
    path: Union[str, Path], space: Optional[SpaceConfig] = None
) -> Tuple[SpaceConfig, Dict[str, np.ndarray], Dict[str, Any]]:
    """Return ``(space, params, manifest)``; with ``space`` given, reject a mismatch."""
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[len(MAGIC) : end])
        stored = manifest["space"]
        stored["ratio_choices"] = tuple(stored["ratio_choices"])
        found = SpaceConfig(**stored)
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    if space is not None and found != space:
        raise CheckpointError(f"{path}: checkpoint space {found} does not match configured space {space}")
    body = memoryview(blob)[end + 1 :]
    expected = found.tensor_shapes()
    params: Dict[str, np.ndarray] = {}
    for t in manifest.get("tensors", []):
        name, shape = t.get("name"), tuple(t.get("shape", ()))
        if name not in expected or expected[name] != shape:
            raise CheckpointError(f"{path}: tensor {name} with shape {shape} does not fit the space")
        if t.get("dtype") != DTYPE:
            raise CheckpointError(f"{path}: tensor {name} has unsupported dtype {t.get('dtype')}")
        lo, n = t["offset"], t["nbytes"]
        if n != int(np.prod(shape)) * 8 or lo + n > len(body):
            raise CheckpointError(f"{path}: tensor {name} runs past the end of the file")
        params[name] = np.frombuffer(body[lo : lo + n], dtype=DTYPE).reshape(shape).astype(np.float64)
    if list(params) != list(expected):
        raise CheckpointError(f"{path}: tensor list does not match the space")
    return found, params, manifest
