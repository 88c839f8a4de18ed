"""Versioned binary checkpoint: config, metadata and named float32 tensors.

Layout (little-endian)::

    b"FWMC", u32 version, u32 json length, json {"config": ..., "meta": ...},
    u32 tensor count, then per tensor: u32 name length, utf-8 name,
    u32 ndim, ndim x u32 dims, float32 payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .world import WorldModel

MAGIC = b"FWMC"
VERSION = 1


def save_checkpoint(model: WorldModel, path: str | Path, meta: dict | None = None) -> None:
    header = json.dumps({"config": model.cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    state = model.state_dict()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path: str | Path) -> tuple[ModelConfig, dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {buf[:4]!r})")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(buf[off:off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        shape = struct.unpack_from(f"<{ndim}I", buf, off + 4)
        off += 4 + 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, "<f4", n, off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes after tensors")
    return ModelConfig.from_dict(header["config"]), header["meta"], tensors


def load_checkpoint(path: str | Path) -> tuple[WorldModel, dict]:
    """Rebuild the model in inference mode together with its metadata."""
    cfg, meta, tensors = read_checkpoint(path)
    model = WorldModel(cfg)
    model.load_state_dict(tensors)
    model.eval()
    return model, meta
