"""STCK1 checkpoint container.

Layout: the 5 magic bytes ``STCK1``, a little-endian u32 byte length, that
many bytes of UTF-8 JSON manifest, then the raw little-endian float64 blocks.
The manifest is ``{"blocks": [{name, rows, cols, byte_offset}, ...],
"meta": {...}}`` with offsets counted from the start of the float section.
"""
from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"STCK1"


class CheckpointError(ValueError):
    pass


def _as_2d(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise CheckpointError(f"block {name!r} has {arr.ndim} dims; STCK1 stores matrices only")
    return arr


def encode_checkpoint(blocks: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    """Blocks are laid out in sorted name order, so equal contents give equal bytes."""
    entries, chunks, offset = [], [], 0
    for name in sorted(blocks):
        arr = _as_2d(name, blocks[name])
        rows, cols = arr.shape
        entries.append({"name": name, "rows": rows, "cols": cols, "byte_offset": offset})
        raw = np.ascontiguousarray(arr).tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"blocks": entries, "meta": dict(meta or {})},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:5] != MAGIC:
        raise CheckpointError("bad magic: not an STCK1 checkpoint")
    if len(data) < 9:
        raise CheckpointError("truncated checkpoint header")
    (mlen,) = struct.unpack_from("<I", data, 5)
    body = 9 + mlen
    if len(data) < body:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(data[9:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from None
    payload = memoryview(data)[body:]
    blocks: dict[str, np.ndarray] = {}
    expected = 0
    for e in manifest["blocks"]:
        n = e["rows"] * e["cols"]
        start = e["byte_offset"]
        if start + 8 * n > len(payload):
            raise CheckpointError(f"block {e['name']!r} runs past the end of the payload")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start)
        blocks[e["name"]] = arr.reshape(e["rows"], e["cols"]).astype(np.float64)
        expected = max(expected, start + 8 * n)
    if expected != len(payload):
        raise CheckpointError(f"payload is {len(payload)} bytes, manifest accounts for {expected}")
    return blocks, manifest.get("meta", {})


def save_checkpoint(path: str | os.PathLike, blocks: Mapping[str, np.ndarray],
                    meta: Mapping | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(blocks, meta))


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
