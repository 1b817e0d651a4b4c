"""SPRT binary tensors, label maps and prototype sidecars.

Layout of an SPRT file::

    b"SPRT" | u8 version (=1) | u8 rank | u32 dims[rank] (LE) | payload

The payload is little-endian f32 for real tensors and little-endian u32 for
label maps, where ``0xFFFFFFFF`` encodes IGNORE. The header carries no dtype
tag, so callers pick :func:`read_tensor` or :func:`read_labels`.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .numerics import IGNORE, MAX_RANK

MAGIC = b"SPRT"
VERSION = 1
IGNORE_U32 = 0xFFFFFFFF


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _header(shape) -> bytes:
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"SPRT supports rank 1..{MAX_RANK}, got {len(shape)}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"SPRT dims must be >= 1, got {tuple(shape)}")
    return MAGIC + struct.pack("<BB", VERSION, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return _header(arr.shape) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_labels(labels) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels.reshape(1)
    out = labels.astype(np.int64)
    if np.any((out < 0) & (out != IGNORE)):
        raise ValueError("label maps may only hold class ids >= 0 or IGNORE")
    out = np.where(out == IGNORE, IGNORE_U32, out).astype("<u4")
    return _header(labels.shape) + out.tobytes()


def _decode(buf: bytes, dtype: str) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not an SPRT file (bad magic)")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported SPRT version {version}")
    if not 1 <= rank <= MAX_RANK:
        raise ValueError(f"invalid SPRT rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    offset = 6 + 4 * rank
    count = int(np.prod(dims))
    payload = buf[offset:]
    if len(payload) != 4 * count:
        raise ValueError(f"SPRT payload holds {len(payload)} bytes, dims {dims} need {4 * count}")
    return np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)


def decode_tensor(buf: bytes) -> np.ndarray:
    return _decode(buf, "<f4").astype(np.float32)


def decode_labels(buf: bytes) -> np.ndarray:
    raw = _decode(buf, "<u4").astype(np.int64)
    return np.where(raw == IGNORE_U32, IGNORE, raw)


def write_tensor(path, arr) -> None:
    atomic_write_bytes(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def write_labels(path, labels) -> None:
    atomic_write_bytes(path, encode_labels(labels))


def read_labels(path) -> np.ndarray:
    return decode_labels(Path(path).read_bytes())


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_prototypes(path, state) -> None:
    """Write a PrototypeState as ``path`` (D x C SPRT) plus ``path.meta``."""
    write_tensor(path, state.p)
    valid = " ".join("1" if v else "0" for v in state.valid)
    atomic_write_text(sidecar_path(path), f"valid: {valid}\ngamma: {state.gamma!r}\n")


def read_prototypes(path):
    from .prototypes import PrototypeState

    p = read_tensor(path)
    if p.ndim != 2:
        raise ShapeError(f"prototype matrix must be D x C, got {p.shape}")
    valid = np.ones(p.shape[1], dtype=bool)
    gamma = 0.5
    meta = sidecar_path(path)
    if meta.exists():
        for line in meta.read_text().splitlines():
            key, _, value = line.partition(":")
            key = key.strip()
            if key == "valid":
                flags = [int(tok) for tok in value.split()]
                if len(flags) != p.shape[1]:
                    raise ShapeError(f"sidecar lists {len(flags)} flags for {p.shape[1]} classes")
                valid = np.array(flags, dtype=bool)
            elif key == "gamma":
                gamma = float(value)
    return PrototypeState(p=p, valid=valid, gamma=gamma)
