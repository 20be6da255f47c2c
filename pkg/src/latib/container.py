"""Self-describing named-array container.

Layout::

    b"LATIBNA1" | u64 manifest length | manifest (UTF-8 JSON) | raw array blocks

The manifest lists each array's name, dtype, shape, byte offset (relative to
the end of the manifest), byte length and SHA-256 digest, plus a free-form
``meta`` mapping. Blocks are C-ordered little-endian bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"LATIBNA1"
_HEADER = struct.Struct("<Q")


class ContainerError(ValueError):
    """Raised when a container is malformed, truncated or corrupted."""


def write_arrays(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    blocks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == object:
            raise ContainerError(f"array {name!r} has object dtype")
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        blocks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"arrays": entries, "meta": dict(meta or {})}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(len(manifest)))
        fh.write(manifest)
        for raw in blocks:
            fh.write(raw)


def read_manifest(path) -> dict:
    data = Path(path).read_bytes()
    manifest, _ = _split(data, path)
    return manifest


def _split(data: bytes, path) -> tuple[dict, int]:
    if len(data) < len(MAGIC) + _HEADER.size or not data.startswith(MAGIC):
        raise ContainerError(f"{path}: not a named-array container")
    (mlen,) = _HEADER.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _HEADER.size
    if start + mlen > len(data):
        raise ContainerError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(data[start:start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: manifest is not valid JSON") from exc
    return manifest, start + mlen


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, meta)``; every block is length- and digest-checked."""
    data = Path(path).read_bytes()
    manifest, base = _split(data, path)
    arrays = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise ContainerError(f"{path}: array {name!r} truncated "
                                 f"({max(0, len(data) - lo)} of {entry['nbytes']} bytes)")
        raw = data[lo:hi]
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise ContainerError(f"{path}: array {name!r} failed its checksum")
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if expected != entry["nbytes"]:
            raise ContainerError(f"{path}: array {name!r} shape {shape} disagrees with its byte length")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays, manifest.get("meta", {})
