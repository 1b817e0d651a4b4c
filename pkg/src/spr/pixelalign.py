"""Prototype-pixel interaction: distances, soft assignment, entropy,
top-alpha reliability filtering, attention weights and pseudo labels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import IGNORE, as_tensor, softmax_rows

DEFAULT_ALPHA = 0.8
DELTA = 1e-12


@dataclass
class PixelStats:
    r_p: np.ndarray
    q: np.ndarray
    h: np.ndarray
    w: np.ndarray
    mask: np.ndarray
    alpha: float
    labels: np.ndarray

    @property
    def masked_count(self) -> int:
        return int(self.mask.sum())


def prototype_pixel_distances(logits_flat, p_r) -> np.ndarray:
    """Squared Euclidean distance from every pixel row to every prototype column."""
    x = as_tensor(logits_flat)
    p = as_tensor(p_r)
    if x.ndim != 2 or p.ndim != 2 or x.shape[1] != p.shape[0]:
        raise ShapeError(f"need N x D pixels and D x C prototypes, got {x.shape} and {p.shape}")
    dtype = np.result_type(x, p)
    out = np.empty((x.shape[0], p.shape[1]), dtype=dtype)
    # direct differences rather than the |x|^2 - 2xp + |p|^2 expansion, which can go negative
    for c in range(p.shape[1]):
        diff = x.astype(np.float64) - p[:, c].astype(np.float64)
        out[:, c] = np.einsum("nd,nd->n", diff, diff)
    return out


def soft_assignment(r_p) -> np.ndarray:
    r_p = as_tensor(r_p)
    if r_p.ndim != 2:
        raise ShapeError(f"distance matrix must be N x C, got {r_p.shape}")
    return softmax_rows(-r_p)


def entropy_map(q) -> np.ndarray:
    """Per-row Shannon entropy in nats, with ``0 * ln 0 = 0``."""
    q = as_tensor(q)
    if q.ndim != 2:
        raise ShapeError(f"assignment matrix must be N x C, got {q.shape}")
    q64 = q.astype(np.float64)
    if np.any(np.abs(q64.sum(axis=1) - 1.0) > 1e-4):
        raise ContractError("rows of q must sum to 1")
    safe = np.where(q64 > 0, q64, 1.0)
    h = -(q64 * np.log(safe)).sum(axis=1)
    return np.maximum(h, 0.0).astype(q.dtype, copy=False)


def retained_count(n: int, alpha: float) -> int:
    # guard against alpha * n landing a hair below an integer, e.g. 0.29 * 100
    return min(n, int(math.floor(alpha * n + 1e-9)))


def reliability_mask(h, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Boolean mask keeping the ``floor(alpha * N)`` lowest-entropy pixels.

    Ties go to the lower pixel index.
    """
    if not 0.0 < alpha <= 1.0:
        raise ContractError(f"alpha must lie in (0, 1], got {alpha}")
    h = np.asarray(h).reshape(-1)
    k = retained_count(h.shape[0], alpha)
    order = np.argsort(h, kind="stable")
    mask = np.zeros(h.shape[0], dtype=bool)
    mask[order[:k]] = True
    return mask


def attention_weights(h, delta: float = DELTA) -> np.ndarray:
    """Entropy normalised by its global maximum; all ones if that maximum is ~0."""
    h = as_tensor(h).reshape(-1)
    top = float(h.max())
    if top <= delta:
        return np.ones_like(h)
    return np.clip(h / top, 0.0, 1.0).astype(h.dtype, copy=False)


def pseudo_labels(q, mask) -> np.ndarray:
    q = as_tensor(q)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if q.ndim != 2 or q.shape[0] != mask.shape[0]:
        raise ShapeError(f"q {q.shape} and mask {mask.shape} disagree")
    labels = np.argmax(q, axis=1).astype(np.int64)
    labels[~mask] = IGNORE
    return labels


def pixel_stats(logits_flat, p_r, alpha: float = DEFAULT_ALPHA, attention: bool = True) -> PixelStats:
    """Run the whole prototype-pixel chain on N x D pixels.

    With ``attention=False`` the weights are forced to one (ablation arm).
    """
    r_p = prototype_pixel_distances(logits_flat, p_r)
    q = soft_assignment(r_p)
    h = entropy_map(q)
    mask = reliability_mask(h, alpha)
    w = attention_weights(h) if attention else np.ones_like(h)
    return PixelStats(r_p, q, h, w, mask, alpha, pseudo_labels(q, mask))
