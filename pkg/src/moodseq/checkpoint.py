"""Binary checkpoint format.

Layout (all integers little-endian):
    b"MSEQ" | u32 version | u32 n + n bytes UTF-8 JSON metadata | u32 tensor count
    then per tensor: u32 n + name | u32 rank | rank x u64 extents | float32 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSEQ"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps rank-0 tensors rank 0
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def loads(buf: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf, source)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {version}, this build reads {VERSION}")
    try:
        metadata = json.loads(r.take(r.u32("metadata length"), "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt metadata ({exc})") from None
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"extents of {name}"))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4")
        tensors[name] = data.reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes")
    return tensors, metadata


def save(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes(), str(path))
