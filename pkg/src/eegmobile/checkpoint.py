"""``EGMW`` checkpoint files.

Layout (little-endian)::

    b"EGMW"  u32 version  u32 count
    count x ( u32 name_len, utf-8 name, u32 rank, u64 x rank dims, f32 x prod(dims) )

Buffers are stored alongside parameters under their own names. The model's
architecture and config go to a JSON sidecar ``<path>.json`` so a checkpoint
can be rebuilt without knowing how it was made.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .models import Model, build_model, config_from_dict, config_to_dict

MAGIC = b"EGMW"
VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                raise TypeError(f"{name}: only float32 tensors are stored, got {arr.dtype}")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'EGMW'", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("name is not valid utf-8", start + 4) from e
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4")
        out[name] = data.astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return out


def save_model(m: Model, path) -> None:
    write_tensors(path, m.state())
    meta = {"arch": m.arch, "config": config_to_dict(m.config)}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_model(path) -> Model:
    meta_path = Path(str(path) + ".json")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing model metadata {meta_path}")
    meta = json.loads(meta_path.read_text())
    cfg = config_from_dict(meta["arch"], meta["config"])
    m = build_model(meta["arch"], cfg, seed=0)
    m.load_state(read_tensors(path))
    return m
