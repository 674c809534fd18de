"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SSLST1"
    u32 metadata length, metadata as UTF-8 JSON
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u8 dtype tag, u32 rank,
                rank x u64 extents, raw little-endian payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SSLST1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
TAGS = {v: k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


class MagicError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class DtypeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @property
    def descriptor(self) -> dict:
        return self.metadata.get("descriptor", {})

    @property
    def kind(self) -> str:
        return self.descriptor.get("kind", "")

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))

    @property
    def order(self) -> int:
        return int(self.metadata.get("order", 0))

    @property
    def fingerprint(self) -> str | None:
        return self.metadata.get("vocab_fingerprint")


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC]
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in TAGS:
            raise DtypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<BI", TAGS[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise MagicError(f"{source}: bad magic {data[:len(MAGIC)]!r}")
    pos = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedError(f"{source}: truncated while reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    metadata = json.loads(take(meta_len, "metadata").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"name of tensor #{index}"))
        name = take(name_len, f"name of tensor #{index}").decode("utf-8")
        tag, rank = struct.unpack("<BI", take(5, f"header of tensor {name!r}"))
        if tag not in DTYPES:
            raise DtypeError(f"{source}: tensor {name!r} has unknown dtype tag {tag}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"extents of tensor {name!r}"))
        dt = DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        payload = take(nbytes, f"payload of tensor {name!r}")
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    return Checkpoint(tensors, metadata)


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), str(path))


def describe(ckpt: Checkpoint) -> str:
    """Plain-text dump of metadata and tensor shapes."""
    lines = [f"{k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(ckpt.metadata.items())]
    for name, arr in ckpt.tensors.items():
        lines.append(f"{name}\t{arr.dtype}\t{list(arr.shape)}")
    return "\n".join(lines)
