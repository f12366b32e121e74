"""Binary checkpoints and atomic file writes.

Layout (all little-endian)::

    8 bytes   magic b"NEUMCKPT"
    u32       version (1)
    u64       param_count
    f64 * n   parameters
    u32       metadata length L
    L bytes   UTF-8 JSON metadata {"optimizer": ..., "step": ...}
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NEUMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    weights: np.ndarray
    optimizer: str = ""
    step: int = 0
    version: int = VERSION
    extra: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return self.weights.size

    def __eq__(self, other):
        return (
            isinstance(other, Checkpoint)
            and self.weights.tobytes() == other.weights.tobytes()
            and (self.optimizer, self.step, self.version, self.extra)
            == (other.optimizer, other.step, other.version, other.extra)
        )


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def encode_checkpoint(weights, optimizer: str = "", step: int = 0, **extra) -> bytes:
    w = np.ascontiguousarray(weights, dtype="<f8").reshape(-1)
    meta = json.dumps({"optimizer": optimizer, "step": int(step), **extra}, sort_keys=True).encode("utf-8")
    return b"".join([
        MAGIC,
        struct.pack("<IQ", VERSION, w.size),
        w.tobytes(),
        struct.pack("<I", len(meta)),
        meta,
    ])


def write_checkpoint(path, weights, optimizer: str = "", step: int = 0, **extra) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(weights, optimizer, step, **extra))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < 8 or data[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    if len(data) < 20:
        raise CheckpointError(f"{source}: truncated header")
    version, n = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{source}: version mismatch (file has {version}, reader supports {VERSION})")
    end = 20 + 8 * n
    if len(data) < end:
        raise CheckpointError(f"{source}: truncated payload")
    weights = np.frombuffer(data, dtype="<f8", count=n, offset=20).astype(np.float64)
    if len(data) < end + 4:
        raise CheckpointError(f"{source}: truncated metadata")
    (mlen,) = struct.unpack_from("<I", data, end)
    blob = data[end + 4:end + 4 + mlen]
    if len(blob) != mlen:
        raise CheckpointError(f"{source}: truncated metadata")
    if len(data) != end + 4 + mlen:
        raise CheckpointError(f"{source}: trailing bytes after metadata")
    try:
        meta = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{source}: corrupt metadata") from None
    optimizer = meta.pop("optimizer", "")
    step = int(meta.pop("step", 0))
    return Checkpoint(weights, optimizer, step, version, meta)


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: unreadable ({e.strerror})") from None
    return decode_checkpoint(data, str(path))
