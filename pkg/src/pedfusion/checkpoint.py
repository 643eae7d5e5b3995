"""Binary checkpoints.

Layout (little-endian)::

    b"PIPCKPT1"
    u32 header length, UTF-8 JSON header {variant, dims, dtype, epoch, seed, metrics}
    u32 parameter count
    per parameter: u16 name length, name, u64 blob length, TNSR blob
    u64 checksum (BLAKE2b, 8-byte digest) of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import decode_tensor, encode_tensor
from .fusion import FusionModel, ModelDims, VariantSpec

MAGIC = b"PIPCKPT1"


class CheckpointError(ValueError):
    pass


def _digest(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=8).digest()


def dumps(model: FusionModel, epoch: int = 0, seed: int = 0, metrics: dict | None = None) -> bytes:
    header = {
        "variant": model.variant.name,
        "dims": list(model.dims.as_tuple()),
        "dtype": model.dtype.name,
        "epoch": int(epoch),
        "seed": int(seed),
        "metrics": metrics or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    named = list(model.named_parameters())
    parts = [MAGIC, struct.pack("<I", len(head)), head, struct.pack("<I", len(named))]
    for name, p in named:
        key = name.encode()
        blob = encode_tensor(p.data)
        parts += [struct.pack("<H", len(key)), key, struct.pack("<Q", len(blob)), blob]
    body = b"".join(parts)
    return body + _digest(body)


def save_checkpoint(model: FusionModel, path, epoch: int = 0, seed: int = 0, metrics: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model, epoch, seed, metrics))
    return path


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise CheckpointError(f"truncated checkpoint reading {what} at offset {pos}")
    return buf[pos : pos + n], pos + n


def loads(buf: bytes, variant: VariantSpec | str | None = None) -> tuple[FusionModel, dict]:
    """Parse and verify a checkpoint; nothing is built unless every check passes."""
    if len(buf) < len(MAGIC) + 8:
        raise CheckpointError(f"truncated checkpoint: {len(buf)} bytes")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {bytes(buf[:len(MAGIC)])!r}")
    body, digest = buf[:-8], buf[-8:]
    if _digest(body) != digest:
        raise CheckpointError("checksum mismatch (file corrupted or truncated)")
    pos = len(MAGIC)
    raw, pos = _take(body, pos, 4, "header length")
    head, pos = _take(body, pos, struct.unpack("<I", raw)[0], "header")
    header = json.loads(head)
    raw, pos = _take(body, pos, 4, "parameter count")
    count = struct.unpack("<I", raw)[0]
    blobs = {}
    for _ in range(count):
        raw, pos = _take(body, pos, 2, "name length")
        key, pos = _take(body, pos, struct.unpack("<H", raw)[0], "parameter name")
        raw, pos = _take(body, pos, 8, "blob length")
        blob, pos = _take(body, pos, struct.unpack("<Q", raw)[0], f"tensor {key.decode()}")
        blobs[key.decode()], _ = decode_tensor(blob)
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} unexpected bytes after parameters at offset {pos}")

    stored = VariantSpec.from_name(header["variant"])
    if variant is not None:
        want = VariantSpec.from_name(variant) if isinstance(variant, str) else variant
        if want != stored:
            raise CheckpointError(f"variant mismatch: checkpoint is {stored.label}, run expects {want.label}")
    model = FusionModel(stored, ModelDims(*header["dims"]), dtype=np.dtype(header["dtype"]))
    named = dict(model.named_parameters())
    if set(named) != set(blobs):
        extra, missing = sorted(set(blobs) - set(named)), sorted(set(named) - set(blobs))
        raise CheckpointError(f"parameter set does not match variant {stored.label}: extra {extra}, missing {missing}")
    for name, p in named.items():
        if blobs[name].shape != p.shape:
            raise CheckpointError(f"{name}: stored shape {blobs[name].shape}, model expects {p.shape}")
    for name, p in named.items():
        p.data[...] = blobs[name]
    return model, header


def load_checkpoint(path, variant: VariantSpec | str | None = None) -> tuple[FusionModel, dict]:
    return loads(Path(path).read_bytes(), variant)
