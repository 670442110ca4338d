"""Checkpoint serialization: JSON manifest line + little-endian float64 blob.

The manifest maps each array name to (shape, dtype, byte offset) into the
blob that follows; round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


FORMAT_TAG = "panact-checkpoint-v1"
_DTYPE = "<f8"


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    step: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], step: int = 0,
                    config: dict[str, Any] | None = None,
                    meta: dict[str, Any] | None = None) -> None:
    entries: dict[str, dict[str, Any]] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        raw = arr.astype(_DTYPE, copy=False).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": _DTYPE, "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_TAG,
        "step": int(step),
        "config": config or {},
        "meta": meta or {},
        "blob_bytes": offset,
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8"))
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest line is not valid JSON ({exc})") from None
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unrecognized format tag {manifest.get('format')!r}")
    expected = int(manifest.get("blob_bytes", -1))
    if expected != len(blob):
        raise CheckpointError(
            f"{path}: blob has {len(blob)} bytes, manifest declares {expected}"
        )
    arrays: dict[str, np.ndarray] = {}
    for name, entry in manifest["arrays"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + count * 8
        if start < 0 or end > len(blob):
            raise CheckpointError(
                f"{path}: array '{name}' spans bytes [{start}, {end}) beyond blob of {len(blob)}"
            )
        arrays[name] = np.frombuffer(blob[start:end], dtype=entry["dtype"]).reshape(shape).copy()
    return Checkpoint(arrays=arrays, step=int(manifest.get("step", 0)),
                      config=manifest.get("config", {}), meta=manifest.get("meta", {}))
