"""GCKP checkpoint container.

Layout (little-endian)::

    "GCKP" | u32 version | u32 epoch | 5 x f64 loss weights
    u32 meta length | meta JSON (utf-8)
    u32 blob count | per blob: u32 name length, name, u32 ndim, ndim x u32 dims
    blob payloads as f32, in manifest order

The meta JSON carries model configuration, RNG states and trainer state.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import LossWeights
from .errors import CheckpointError

GCKP_MAGIC = b"GCKP"
GCKP_VERSION = 1


@dataclass
class Checkpoint:
    epoch: int
    weights: LossWeights
    meta: dict = field(default_factory=dict)
    blobs: dict[str, np.ndarray] = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.blobs.items() if k.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [struct.pack("<4sII", GCKP_MAGIC, GCKP_VERSION, int(ckpt.epoch))]
    parts.append(struct.pack("<5d", *ckpt.weights.as_tuple()))
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    parts.append(struct.pack("<I", len(ckpt.blobs)))
    payload = []
    for name, arr in ckpt.blobs.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes(order="C"))
    return b"".join(parts + payload)


def from_bytes(buf: bytes) -> Checkpoint:
    try:
        if buf[:4] != GCKP_MAGIC:
            raise CheckpointError("missing GCKP magic")
        version, epoch = struct.unpack_from("<II", buf, 4)
        if version != GCKP_VERSION:
            raise CheckpointError(f"unsupported GCKP version {version}")
        off = 12
        weights = LossWeights(*struct.unpack_from("<5d", buf, off))
        off += 40
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        meta = json.loads(buf[off:off + n].decode())
        off += n
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        manifest = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + ln].decode()
            off += ln
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            manifest.append((name, dims))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    need = sum(4 * int(np.prod(d, dtype=np.int64)) for _, d in manifest)
    if len(buf) - off != need:
        raise CheckpointError(f"blob payload is {len(buf) - off} bytes, manifest needs {need}")
    blobs = {}
    for name, dims in manifest:
        size = 4 * int(np.prod(dims, dtype=np.int64))
        blobs[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=off).astype(np.float32).reshape(dims)
        off += size
    return Checkpoint(epoch, weights, meta, blobs)


def save(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    """Atomic write: temp file in the target directory, fsync, rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load(path: str | os.PathLike) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)


def blob_hash(blobs: Mapping[str, np.ndarray], prefix: str = "") -> str:
    """SHA-256 over names, shapes and f32 bytes of the blobs under ``prefix``."""
    h = hashlib.sha256()
    for name in sorted(blobs):
        if not name.startswith(prefix):
            continue
        arr = np.asarray(blobs[name], dtype="<f4")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
