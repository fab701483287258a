"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SGMF"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (utf-8), u8 dtype code, u8 rank,
                u32 extent * rank, payload (little-endian, row-major)
    trailer:    u64 step, 32-byte sha256 of the config JSON,
                u32 config_len, config JSON (utf-8)
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SGMF"
VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(_config_bytes(config)).digest()


def _config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    step: int = 0
    config: dict = field(default_factory=dict)

    @property
    def digest(self) -> bytes:
        return config_digest(self.config)

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())


def from_registry(registry, step: int = 0, config: dict | None = None) -> Checkpoint:
    tensors = OrderedDict((name, np.array(t.data, copy=True)) for name, t in registry.items())
    return Checkpoint(tensors, step, dict(config or {}))


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    cfg = _config_bytes(ckpt.config)
    parts.append(struct.pack("<Q", ckpt.step) + hashlib.sha256(cfg).digest())
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not an SGMF checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        code, rank = r.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name!r}")
        shape = r.unpack(f"<{rank}I")
        dt = CODE_DTYPES[code].newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(CODE_DTYPES[code])
    (step,) = r.unpack("<Q")
    digest = r.take(32)
    (clen,) = r.unpack("<I")
    cfg_raw = r.take(clen)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes")
    if hashlib.sha256(cfg_raw).digest() != digest:
        raise CheckpointError("config digest mismatch")
    return Checkpoint(tensors, step, json.loads(cfg_raw))


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def load_into(registry, ckpt: Checkpoint) -> None:
    """Copy checkpoint tensors into live parameters; names and shapes must match."""
    missing = [n for n in registry if n not in ckpt.tensors]
    extra = [n for n in ckpt.tensors if n not in registry]
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, t in registry.items():
        src = ckpt.tensors[name]
        if src.shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {src.shape}, model {t.shape}")
    for name, t in registry.items():
        t.data = np.array(ckpt.tensors[name], dtype=t.dtype, copy=True)
