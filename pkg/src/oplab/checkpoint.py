"""Model checkpoint format: a JSON manifest plus one binary blob.

``manifest.json`` records the architecture family, its config and the byte
layout of every named tensor; ``params.bin`` holds the tensors back to back
as little-endian float64 (complex tensors as interleaved real/imaginary
float64 pairs).  Loading rebuilds bit-identical arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
FORMAT_TAG = "oplab-checkpoint-v1"

_DTYPES = {"float64": "<f8", "complex128": "<c16"}


def save_checkpoint(path, family: str, config: dict, tensors: dict) -> None:
    """Write ``{name: ndarray}`` under ``path`` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            dtype = "complex128"
            raw = np.ascontiguousarray(arr, dtype="<c16").tobytes()
        else:
            dtype = "float64"
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT_TAG, "family": family, "config": config,
                "tensors": entries}
    (path / BLOB_NAME).write_bytes(b"".join(chunks))
    with open(path / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint directory; returns (family, config, {name: ndarray})."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_TAG:
        raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")
    blob = (path / BLOB_NAME).read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start:start + nbytes], dtype=dt)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return manifest["family"], manifest["config"], tensors


def checkpoint_real_count(path) -> int:
    """Total float64 slots in the blob (complex entries count as two)."""
    blob = Path(path) / BLOB_NAME
    return blob.stat().st_size // 8
