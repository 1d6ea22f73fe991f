"""Checkpoint serialization: magic, config echo, named weights, checksum.

Layout (all integers little-endian):

    "TCD1"
    u32 config length, UTF-8 config text (dotted key-value lines)
    u32 parameter count
    per parameter: u16 name length, name, u8 ndim, u32 dims..., float32 data
    sha256 digest of everything above

Weights are stored in parameter-name order as registered by the model, and a
load only touches the model after every shape has been checked, so a mismatch
never leaves a half-updated model.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TCD1"


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


def save(path, model, config_text: str):
    params = model.parameters()
    names = [p.name for p in params]
    if len(set(names)) != len(names) or any(n is None for n in names):
        raise CheckpointError("model parameters must have unique names; "
                              "call finalize_names first")
    buf = bytearray(MAGIC)
    cfg = config_text.encode("utf-8")
    buf += struct.pack("<I", len(cfg)) + cfg
    buf += struct.pack("<I", len(params))
    for p in params:
        name = p.name.encode("utf-8")
        buf += struct.pack("<H", len(name)) + name
        buf += struct.pack("<B", len(p.shape))
        buf += struct.pack(f"<{len(p.shape)}I", *p.shape)
        buf += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    buf += hashlib.sha256(buf).digest()
    Path(path).write_bytes(bytes(buf))


def read(path):
    """Parse a checkpoint file into (config_text, {name: float32 array})."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 32 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a TCD checkpoint (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch(f"{path}: checksum mismatch, file is corrupt or truncated")
    off = 4
    (cfg_len,) = struct.unpack_from("<I", body, off)
    off += 4
    config_text = body[off:off + cfg_len].decode("utf-8")
    off += cfg_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    weights = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        weights[name] = data.copy()
    if off != len(body):
        raise ChecksumMismatch(f"{path}: {len(body) - off} trailing bytes after weights")
    return config_text, weights


def load(path, model) -> str:
    """Load weights into model; returns the embedded config text."""
    config_text, weights = read(path)
    params = model.parameters()
    for p in params:  # validate everything before touching the model
        if p.name not in weights:
            raise ShapeMismatch(f"checkpoint is missing parameter {p.name!r}")
        if weights[p.name].shape != p.shape:
            raise ShapeMismatch(
                f"parameter {p.name!r}: checkpoint shape {weights[p.name].shape} "
                f"does not match model shape {p.shape}")
    extra = set(weights) - {p.name for p in params}
    if extra:
        raise ShapeMismatch(f"checkpoint has unknown parameters: {sorted(extra)[:3]}")
    for p in params:
        p.data = weights[p.name].astype(p.data.dtype)
    return config_text
