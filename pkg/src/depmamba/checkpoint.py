"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"LWSM"  u32 version  32-byte config fingerprint  u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, rank * u64 extents,
                float64 data in row-major order
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .numerics import ParamStore

MAGIC = b"LWSM"
VERSION = 1


def encode(store: ParamStore, fingerprint: bytes) -> bytes:
    if len(fingerprint) != 32:
        raise CheckpointError("fingerprint must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), fingerprint, struct.pack("<I", len(store))]
    for name, value in store.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple[bytes, dict[str, np.ndarray]]:
    """Returns ``(fingerprint, {name: array})``."""
    try:
        if blob[:4] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        fingerprint = blob[8:40]
        (count,) = struct.unpack_from("<I", blob, 40)
        pos = 44
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            tensors[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return fingerprint, tensors


def save(path, store: ParamStore, fingerprint: bytes) -> str:
    """Write the checkpoint and return its SHA-256 hex digest."""
    blob = encode(store, fingerprint)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path, store: ParamStore, fingerprint: bytes) -> str:
    """Load parameters into ``store``; returns the file's SHA-256 hex digest."""
    blob = Path(path).read_bytes()
    found, tensors = decode(blob)
    if found != fingerprint:
        raise CheckpointError(f"{path}: model config fingerprint mismatch")
    if set(tensors) != set(store.params):
        raise CheckpointError(f"{path}: parameter names do not match the model")
    for name, value in tensors.items():
        if value.shape != store[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        store.set(name, value)
    return hashlib.sha256(blob).hexdigest()
