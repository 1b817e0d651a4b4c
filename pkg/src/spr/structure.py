"""Prototype-prototype interactions and structural regularization.

For a D x C prototype matrix ``P``:

* inter-class tensor ``R_e[d] = outer(P[d, :])``  (D x C x C)
* intra-class tensor ``R_a[c] = outer(P[:, c])``  (C x D x D)

Each slice is normalised row-wise by its own diagonal plus ``epsilon`` and
used to build weighted prototypes, which are subtracted from ``P`` with
weights ``lambda_e`` and ``lambda_a``. No clamping of negative entries is
applied anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import as_tensor

DEFAULT_EPSILON = 1e-8
DEFAULT_LAMBDA = 0.1
BYTES_PER_ENTRY = 4


@dataclass
class InteractionTensors:
    r_e: np.ndarray
    r_a: np.ndarray
    r_e_norm: np.ndarray
    r_a_norm: np.ndarray
    epsilon: float


@dataclass
class RegularizedPrototypes:
    p_e: np.ndarray
    p_a: np.ndarray
    p_r: np.ndarray
    lambda_e: float
    lambda_a: float
    interactions: InteractionTensors | None = None
    diagnostics: dict = field(default_factory=dict)


class StorageAccounting:
    """Allocation hook: tallies the bytes of every interaction array built."""

    def __init__(self):
        self.entries: list[tuple[str, tuple, int]] = []

    def record(self, name: str, arr: np.ndarray) -> np.ndarray:
        self.entries.append((name, arr.shape, arr.nbytes))
        return arr

    @property
    def total_bytes(self) -> int:
        return sum(n for _, _, n in self.entries)


def interaction_storage_bytes(num_channels: int, num_classes: int, decoupled: bool = False,
                              itemsize: int = BYTES_PER_ENTRY) -> int:
    d, c = num_channels, num_classes
    if decoupled:
        return (c * c + d * d) * itemsize
    return (d * c * c + c * d * d) * itemsize


def _matrix(p_h) -> np.ndarray:
    p_h = as_tensor(p_h)
    if p_h.ndim != 2:
        raise ShapeError(f"prototype matrix must be D x C, got {p_h.shape}")
    return p_h


def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")


def _normalize_by_diagonal(r: np.ndarray, epsilon: float) -> np.ndarray:
    # out[..., i, j] = r[..., i, j] / (r[..., i, i] + eps)
    _check_epsilon(epsilon)
    r = as_tensor(r)
    if r.ndim < 2 or r.shape[-1] != r.shape[-2]:
        raise ShapeError(f"expected square trailing slices, got {r.shape}")
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    return (r / (diag[..., :, None] + epsilon)).astype(r.dtype, copy=False)


def inter_class_interaction(p_h) -> np.ndarray:
    p = _matrix(p_h)
    return np.einsum("dc,dk->dck", p, p)


def normalize_inter(r_e, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    if np.ndim(r_e) != 3:
        raise ShapeError(f"inter-class tensor must be D x C x C, got {np.shape(r_e)}")
    return _normalize_by_diagonal(r_e, epsilon)


def intra_class_interaction(p_h) -> np.ndarray:
    p = _matrix(p_h)
    return np.einsum("dc,ec->cde", p, p)


def normalize_intra(r_a, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    if np.ndim(r_a) != 3:
        raise ShapeError(f"intra-class tensor must be C x D x D, got {np.shape(r_a)}")
    return _normalize_by_diagonal(r_a, epsilon)


def weighted_prototypes(r_e_norm, r_a_norm, p_h):
    """Inter- and intra-class weighted prototypes, each D x C.

    ``p_e[d, c] = sum_k r_e_norm[d, c, k] * p_h[d, k]``
    ``p_a[d, c] = sum_e r_a_norm[c, d, e] * p_h[e, c]``
    """
    p = _matrix(p_h)
    d, c = p.shape
    if np.shape(r_e_norm) != (d, c, c) or np.shape(r_a_norm) != (c, d, d):
        raise ShapeError(
            f"interaction shapes {np.shape(r_e_norm)}, {np.shape(r_a_norm)} "
            f"inconsistent with prototypes {p.shape}"
        )
    p_e = np.einsum("dck,dk->dc", r_e_norm, p)
    p_a = np.einsum("cde,ec->dc", r_a_norm, p)
    return p_e, p_a


def regularize_prototypes(p_h, p_e, p_a, lambda_e: float = DEFAULT_LAMBDA,
                          lambda_a: float = DEFAULT_LAMBDA) -> np.ndarray:
    if lambda_e < 0 or lambda_a < 0:
        raise ContractError(f"lambdas must be non-negative, got {lambda_e}, {lambda_a}")
    p = _matrix(p_h)
    if np.shape(p_e) != p.shape or np.shape(p_a) != p.shape:
        raise ShapeError("weighted prototypes must match the prototype matrix")
    return p - lambda_e * p_e - lambda_a * p_a


def decoupled_interactions(p_h, epsilon: float = DEFAULT_EPSILON):
    """Global C x C class and D x D channel correlations, diagonal-normalised.

    The class matrix equals the channel-sum of the inter-class slices; the
    channel matrix equals the class-sum of the intra-class slices.
    """
    p = _matrix(p_h)
    r_e_g = _normalize_by_diagonal(p.T @ p, epsilon)
    r_a_g = _normalize_by_diagonal(p @ p.T, epsilon)
    return r_e_g, r_a_g


def decoupled_weighted_prototypes(r_e_g, r_a_g, p_h):
    p = _matrix(p_h)
    return p @ np.asarray(r_e_g).T, np.asarray(r_a_g) @ p


def structural_regularization(p_h, valid=None, lambda_e: float = DEFAULT_LAMBDA,
                              lambda_a: float = DEFAULT_LAMBDA, epsilon: float = DEFAULT_EPSILON,
                              decoupled: bool = False,
                              storage: StorageAccounting | None = None) -> RegularizedPrototypes:
    """Full regularization pass from a blended prototype matrix to ``P_r``.

    Columns flagged invalid are zeroed before any interaction is formed, so
    absent classes add no structure; they are listed in the diagnostics.
    """
    if lambda_e < 0 or lambda_a < 0:
        raise ContractError(f"lambdas must be non-negative, got {lambda_e}, {lambda_a}")
    _check_epsilon(epsilon)
    p = _matrix(p_h)
    if valid is None:
        valid = np.ones(p.shape[1], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (p.shape[1],):
        raise ShapeError(f"{valid.shape} validity flags for {p.shape[1]} classes")
    p = np.where(valid[None, :], p, 0).astype(p.dtype)
    storage = storage if storage is not None else StorageAccounting()

    interactions = None
    if decoupled:
        r_e_g, r_a_g = decoupled_interactions(p, epsilon)
        storage.record("r_e_global", r_e_g)
        storage.record("r_a_global", r_a_g)
        p_e, p_a = decoupled_weighted_prototypes(r_e_g, r_a_g, p)
    else:
        r_e = storage.record("r_e", inter_class_interaction(p))
        r_a = storage.record("r_a", intra_class_interaction(p))
        r_e_norm = normalize_inter(r_e, epsilon)
        r_a_norm = normalize_intra(r_a, epsilon)
        interactions = InteractionTensors(r_e, r_a, r_e_norm, r_a_norm, epsilon)
        p_e, p_a = weighted_prototypes(r_e_norm, r_a_norm, p)

    p_r = regularize_prototypes(p, p_e, p_a, lambda_e, lambda_a)
    diagnostics = {
        "frobenius_pe": float(np.linalg.norm(p_e.astype(np.float64))),
        "frobenius_pa": float(np.linalg.norm(p_a.astype(np.float64))),
        "invalid_classes": [int(c) for c in np.flatnonzero(~valid)],
        "interaction_bytes": storage.total_bytes,
        "decoupled": bool(decoupled),
    }
    return RegularizedPrototypes(p_e, p_a, p_r, lambda_e, lambda_a, interactions, diagnostics)


def correlation_matrix(p):
    """Pearson correlation between the columns of ``p`` (taken over rows).

    Returns ``(corr, zero_variance)``; rows and columns of zero-variance
    columns are set to 0, diagonal included.
    """
    p = _matrix(p).astype(np.float64)
    centered = p - p.mean(axis=0, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    # relative cut so that rounding residue of a constant column counts as zero
    scale = np.abs(p).max(axis=0) * np.sqrt(p.shape[0])
    zero = norms <= 1e-10 * scale + np.finfo(np.float64).tiny
    safe = np.where(zero, 1.0, norms)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr[zero, :] = 0.0
    corr[:, zero] = 0.0
    return corr, zero


def correlation_distance(protos_a, protos_b, valid=None, return_diagnostics: bool = False):
    """Frobenius distance between the class-correlation matrices of two
    prototype sets. Invalid classes are dropped before correlating."""
    a, b = _matrix(protos_a), _matrix(protos_b)
    if a.shape != b.shape:
        raise ShapeError(f"prototype shapes differ: {a.shape} vs {b.shape}")
    keep = np.ones(a.shape[1], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if keep.sum() < 2:
        raise ContractError("correlation_distance needs at least two valid classes")
    corr_a, zero_a = correlation_matrix(a[:, keep])
    corr_b, zero_b = correlation_matrix(b[:, keep])
    dist = float(np.linalg.norm(corr_a - corr_b))
    if not return_diagnostics:
        return dist
    classes = np.flatnonzero(keep)
    return dist, {
        "zero_variance_a": [int(c) for c in classes[zero_a]],
        "zero_variance_b": [int(c) for c in classes[zero_b]],
        "excluded": [int(c) for c in np.flatnonzero(~keep)],
    }
