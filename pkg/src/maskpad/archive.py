"""Single-file weight archive: JSON manifest plus raw float32 payload.

Layout::

    bytes 0..7    magic  b"MPWARCHV"
    bytes 8..11   version, uint32 little-endian (currently 1)
    bytes 12..15  manifest length in bytes, uint32 little-endian
    ...           UTF-8 JSON manifest
    ...           payload: contiguous little-endian float32, row-major

The manifest is an ordered list of ``{"name", "dtype", "shape", "offset"}``
with offsets relative to the payload start.  Only float tensors are stored;
integer bookkeeping buffers (batch-norm step counters) are skipped since they
do not affect inference.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"MPWARCHV"
VERSION = 1


class ArchiveError(ValueError):
    pass


def save_archive(path: Path, tensors: dict[str, np.ndarray]) -> list[dict]:
    if not tensors:
        raise ArchiveError("refusing to write an empty archive")
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append(
            {"name": name, "dtype": "<f4", "shape": list(arr.shape), "offset": offset}
        )
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    return manifest


def read_manifest(path: Path) -> tuple[list[dict], bytes]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise ArchiveError(f"{path}: not a weight archive")
    version, mlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    payload = data[16 + mlen :]
    _validate_manifest(manifest, len(payload))
    return manifest, payload


def _validate_manifest(manifest: list[dict], payload_size: int) -> None:
    names = [e["name"] for e in manifest]
    if len(set(names)) != len(names):
        raise ArchiveError("duplicate tensor names in manifest")
    expected = 0
    for entry in manifest:
        if entry["offset"] != expected:
            raise ArchiveError(f"{entry['name']}: offsets overlap or leave gaps")
        expected += int(np.prod(entry["shape"], dtype=np.int64)) * 4
    if expected != payload_size:
        raise ArchiveError(
            f"payload is {payload_size} bytes but manifest sums to {expected}"
        )


def load_archive(path: Path) -> dict[str, np.ndarray]:
    manifest, payload = read_manifest(path)
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(
            payload, dtype="<f4", count=count, offset=entry["offset"]
        ).reshape(entry["shape"])
        out[entry["name"]] = arr.copy()
    return out


def export_model(model: torch.nn.Module, path: Path) -> list[dict]:
    tensors = {}
    for name, tensor in model.state_dict().items():
        if not tensor.is_floating_point():
            continue  # num_batches_tracked counters; irrelevant to inference
        tensors[name] = tensor.detach().cpu().numpy()
    return save_archive(path, tensors)


def import_model(model: torch.nn.Module, path: Path) -> None:
    arrays = load_archive(path)
    state = model.state_dict()
    missing = [n for n, t in state.items() if t.is_floating_point() and n not in arrays]
    if missing:
        raise ArchiveError(f"archive lacks tensors: {missing[:5]}...")
    extra = [n for n in arrays if n not in state]
    if extra:
        raise ArchiveError(f"archive has tensors the model lacks: {extra[:5]}...")
    with torch.no_grad():
        for name, arr in arrays.items():
            if tuple(state[name].shape) != tuple(arr.shape):
                raise ArchiveError(
                    f"{name}: shape {tuple(arr.shape)} does not match model {tuple(state[name].shape)}"
                )
            state[name].copy_(torch.from_numpy(arr))
