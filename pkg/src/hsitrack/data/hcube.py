"""HCUBE sequence files.

``<name>.hsq`` holds the hyperspectral frames::

    b"HSQ1" | u32 frames | u32 height | u32 width | u32 bands | u32 name_len | name (UTF-8)
    | frames*bands*height*width little-endian float32, frame-major, band-major, row-major

Next to it live ``<name>.fc.hsq`` (the false-colour frames, same layout with
three bands), ``<name>.gt.json`` (a list of ``[x, y, w, h]`` per frame) and
``<name>.meta.json`` (generator seed and free-form metadata).
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .modality import Modality, SequenceRecord

MAGIC = b"HSQ1"
_HEADER = struct.Struct("<5I")


class HcubeError(ValueError):
    pass


class BadMagicError(HcubeError):
    pass


class TruncatedError(HcubeError):
    pass


class SizeMismatchError(HcubeError):
    pass


def encode_hcube(frames: np.ndarray, modality: str) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise HcubeError(f"HCUBE needs F x B x H x W data, got {frames.shape}")
    f, b, h, w = frames.shape
    name = modality.encode("utf-8")
    head = MAGIC + _HEADER.pack(f, h, w, b, len(name)) + name
    return head + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def decode_hcube(data: bytes) -> tuple[np.ndarray, str]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < 4 + _HEADER.size:
        raise TruncatedError("file ends inside the HCUBE header")
    f, h, w, b, nlen = _HEADER.unpack_from(data, 4)
    start = 4 + _HEADER.size + nlen
    if len(data) < start:
        raise TruncatedError("file ends inside the modality name")
    name = data[4 + _HEADER.size:start].decode("utf-8")
    want = f * b * h * w * 4
    have = len(data) - start
    if have != want:
        raise SizeMismatchError(
            f"header declares {f} frames x {b} bands x {h}x{w} ({want} bytes) but payload has {have} bytes")
    arr = np.frombuffer(data, dtype="<f4", offset=start).reshape(f, b, h, w)
    return arr.astype(np.float32), name


def write_hcube(path: str | os.PathLike, frames: np.ndarray, modality: str) -> None:
    Path(path).write_bytes(encode_hcube(frames, modality))


def read_hcube(path: str | os.PathLike) -> tuple[np.ndarray, str]:
    return decode_hcube(Path(path).read_bytes())


def sidecar_paths(path: str | os.PathLike) -> dict[str, Path]:
    path = Path(path)
    stem = path.name[:-4] if path.name.endswith(".hsq") else path.name
    d = path.parent
    return {
        "hsi": path,
        "fc": d / f"{stem}.fc.hsq",
        "gt": d / f"{stem}.gt.json",
        "meta": d / f"{stem}.meta.json",
    }


def save_sequence(record: SequenceRecord, path: str | os.PathLike) -> None:
    p = sidecar_paths(path)
    write_hcube(p["hsi"], record.frames, record.modality.name)
    write_hcube(p["fc"], record.false_color, record.modality.name)
    p["gt"].write_text(json.dumps([[float(v) for v in box] for box in record.gt_boxes]))
    meta = {"name": record.name, "seed": record.seed, **record.meta}
    p["meta"].write_text(json.dumps(meta, sort_keys=True))


def load_sequence(path: str | os.PathLike) -> SequenceRecord:
    p = sidecar_paths(path)
    frames, modality = read_hcube(p["hsi"])
    fc, _ = read_hcube(p["fc"])
    if fc.shape[1] != 3 or fc.shape[0] != frames.shape[0] or fc.shape[2:] != frames.shape[2:]:
        raise SizeMismatchError(f"false-colour file {p['fc'].name} has shape {fc.shape}, frames {frames.shape}")
    boxes = np.asarray(json.loads(p["gt"].read_text()), dtype=np.float64).reshape(-1, 4)
    if len(boxes) != frames.shape[0]:
        raise SizeMismatchError(f"{p['gt'].name} has {len(boxes)} boxes for {frames.shape[0]} frames")
    meta = json.loads(p["meta"].read_text()) if p["meta"].exists() else {}
    name = meta.pop("name", p["hsi"].name[:-4])
    seed = meta.pop("seed", None)
    return SequenceRecord(frames, fc, boxes, Modality(modality, frames.shape[1]), seed=seed,
                          name=name, meta=meta)


def find_sequences(root: str | os.PathLike) -> list[Path]:
    """All HSI sequence files under ``root`` (false-colour companions excluded), sorted."""
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*.hsq") if not p.name.endswith(".fc.hsq"))
