"""
Checkpoint files.

Layout: magic ``"TGCN"``, format version (u32 LE), manifest length (u32 LE),
a UTF-8 JSON manifest, then the parameter blob. The manifest holds
``{"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}`` where
``offset`` counts bytes from the start of the blob; every tensor is stored as
little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"TGCN"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path, tensors: dict, meta: dict) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(buf)
        offset += len(buf)
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> tuple:
    """Return ``(tensors, meta)``; tensors map names to float32 arrays in file order."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise InputError(f"{path}: truncated checkpoint")
    magic, version, mlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + mlen
    try:
        manifest = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: unreadable manifest ({exc})") from None
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = start + entry["offset"]
        if lo + 4 * count > len(raw):
            raise InputError(f"{path}: tensor {entry['name']} runs past the end of the file")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=lo).reshape(shape).copy()
    return tensors, manifest["meta"]
