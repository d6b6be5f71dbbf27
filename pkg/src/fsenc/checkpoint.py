"""Single-file tensor archive used for every checkpoint in the project.

Layout: 8-byte magic ``FSECKPT1``, an 8-byte little-endian header length,
a UTF-8 JSON header, then the raw float32 tensor payload. Offsets in the
header index are relative to the start of the payload. Serialization is
fully deterministic (sorted keys, compact JSON) so identical contents
produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"FSECKPT1"
FORMAT_VERSION = 1


class ArchiveError(RuntimeError):
    """Raised for malformed or incompatible archive files."""


def _as_f32_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value).astype("<f4", copy=False)
    # np.require keeps 0-d shapes, unlike ascontiguousarray
    return np.require(arr, requirements=["C"])


def save_archive(path, tensors: dict, specs: dict | None = None) -> Path:
    """Write ``tensors`` (name -> array-like) plus a JSON ``specs`` blob."""
    path = Path(path)
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = _as_f32_array(tensors[name])
        raw = arr.tobytes(order="C")
        index[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "byte_offset": offset,
            "byte_length": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "specs": specs or {},
        "tensors": index,
    }
    header_raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_raw)))
        fh.write(header_raw)
        for raw in blobs:
            fh.write(raw)
    return path


def load_archive(path) -> tuple[dict, dict]:
    """Read an archive; returns (tensors as float32 ndarrays, specs dict)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ArchiveError(f"{path}: bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ArchiveError(f"{path}: unsupported format_version "
                               f"{header.get('format_version')!r}")
        payload = fh.read()
    tensors = {}
    for name, meta in header["tensors"].items():
        if meta["dtype"] != "f32":
            raise ArchiveError(f"{path}: tensor {name!r} has dtype {meta['dtype']!r}")
        lo = meta["byte_offset"]
        hi = lo + meta["byte_length"]
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(meta["shape"])
        tensors[name] = arr.copy()
    return tensors, header["specs"]


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def state_dict_tensors(module: torch.nn.Module, prefix: str) -> dict:
    """Flatten a module state dict into archive entries under ``prefix/``."""
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_state_dict_tensors(module: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {}
    want = f"{prefix}/"
    for name, arr in tensors.items():
        if name.startswith(want):
            state[name[len(want):]] = torch.from_numpy(arr)
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise ArchiveError(f"archive lacks tensors for {prefix!r}: {sorted(missing)[:4]}")
    module.load_state_dict(state)


def parameter_hash(module: torch.nn.Module) -> str:
    """Stable hash over all parameters; used to assert frozen weights."""
    digest = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(_as_f32_array(param).tobytes(order="C"))
    return digest.hexdigest()
