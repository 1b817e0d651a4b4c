"""Dense tensor helpers shared by every stage of the pipeline.

Tensors are plain row-major ``numpy.ndarray`` objects of rank <= 4. Storage
defaults to float32; float64 inputs are kept as float64 so that gradient
checks have the precision they need. Reductions always accumulate in float64.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import ShapeError

MAX_RANK = 4

#: In-memory label for pixels excluded from every loss and metric.
IGNORE = -1


class _Missing(enum.Enum):
    MISSING = "MISSING"

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False


#: Returned by :func:`masked_mean` when the mask selects nothing. Never NaN.
MISSING = _Missing.MISSING


def as_tensor(x, dtype=None) -> np.ndarray:
    """Coerce ``x`` to a floating C-contiguous array of rank <= 4."""
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if arr.ndim > MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
    if arr.size == 0:
        raise ShapeError(f"empty tensor with dims {arr.shape}")
    return np.ascontiguousarray(arr)


def check_finite(x: np.ndarray, name: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{name} contains non-finite values")


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    m = as_tensor(m)
    if m.ndim < 1:
        raise ShapeError("softmax_rows needs at least one axis")
    shifted = m.astype(np.float64) - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return out.astype(m.dtype, copy=False)


def log_softmax_rows(m) -> np.ndarray:
    m = as_tensor(m)
    shifted = m.astype(np.float64) - m.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return out.astype(m.dtype, copy=False)


def masked_mean(channel, mask):
    """Mean of ``channel`` over the pixels where ``mask`` is 1.

    Returns :data:`MISSING` when the mask is empty.
    """
    channel = as_tensor(channel)
    mask = np.asarray(mask)
    if channel.shape != mask.shape:
        raise ShapeError(f"channel {channel.shape} and mask {mask.shape} differ")
    weights = mask.astype(np.float64)
    denom = weights.sum()
    if denom == 0:
        return MISSING
    return float((channel.astype(np.float64) * weights).sum() / denom)


def outer(v) -> np.ndarray:
    """``v^T v`` for a 1xK (or flat K) vector."""
    v = as_tensor(v)
    if v.ndim == 2 and v.shape[0] == 1:
        v = v[0]
    if v.ndim != 1:
        raise ShapeError(f"outer expects a 1xK vector, got {v.shape}")
    return np.multiply.outer(v, v)
