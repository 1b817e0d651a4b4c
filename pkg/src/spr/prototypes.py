"""Class prototypes: per-class centroids of pixel logits, and their blending."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import IGNORE, as_tensor

DEFAULT_GAMMA = 0.5


@dataclass
class PrototypeState:
    """A D x C prototype matrix whose columns are class centroids.

    ``valid[c]`` is False for classes that have never been observed; such
    columns hold zeros (cold start) or a carried-forward estimate.
    """

    p: np.ndarray
    valid: np.ndarray
    gamma: float = DEFAULT_GAMMA
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.p = as_tensor(self.p)
        if self.p.ndim != 2:
            raise ShapeError(f"prototype matrix must be D x C, got {self.p.shape}")
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.valid.shape[0] != self.p.shape[1]:
            raise ShapeError(f"{self.valid.shape[0]} validity flags for {self.p.shape[1]} classes")
        _check_gamma(self.gamma)

    @property
    def num_channels(self) -> int:
        return self.p.shape[0]

    @property
    def num_classes(self) -> int:
        return self.p.shape[1]

    def copy(self) -> PrototypeState:
        return PrototypeState(self.p.copy(), self.valid.copy(), self.gamma, list(self.history))


def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")


def estimate_prototypes(logits, labels, num_classes: int, gamma: float = DEFAULT_GAMMA) -> PrototypeState:
    """Masked per-channel mean of ``logits`` (..., D) for every class label.

    ``labels`` has the leading shape of ``logits``; IGNORE pixels are skipped.
    """
    if num_classes <= 0:
        raise ContractError(f"num_classes must be positive, got {num_classes}")
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"logits {logits.shape} do not match labels {labels.shape}")
    flat = logits.reshape(-1, logits.shape[-1]).astype(np.float64)
    lab = labels.reshape(-1).astype(np.int64)
    bad = (lab != IGNORE) & ((lab < 0) | (lab >= num_classes))
    if np.any(bad):
        raise ContractError(f"labels outside 0..{num_classes - 1} and not IGNORE")

    keep = lab != IGNORE
    lab, flat = lab[keep], flat[keep]
    counts = np.bincount(lab, minlength=num_classes).astype(np.float64)
    sums = np.zeros((num_classes, flat.shape[1]), dtype=np.float64)
    np.add.at(sums, lab, flat)

    valid = counts > 0
    p = np.zeros_like(sums)
    p[valid] = sums[valid] / counts[valid, None]
    return PrototypeState(p.T.astype(logits.dtype), valid, gamma)


def _check_pair(a: PrototypeState, b: PrototypeState):
    if a.p.shape != b.p.shape:
        raise ShapeError(f"prototype shapes differ: {a.p.shape} vs {b.p.shape}")


def blend_prototypes(source: PrototypeState, target: PrototypeState, gamma: float | None = None) -> PrototypeState:
    """``gamma * source + (1 - gamma) * target``, column by column.

    A class valid on only one side takes that side unweighted; a class
    invalid on both stays invalid with the zero cold-start column.
    """
    _check_pair(source, target)
    gamma = source.gamma if gamma is None else gamma
    _check_gamma(gamma)
    both = source.valid & target.valid
    out = np.zeros(source.p.shape, dtype=np.result_type(source.p, target.p))
    out[:, both] = gamma * source.p[:, both] + (1.0 - gamma) * target.p[:, both]
    only_s = source.valid & ~target.valid
    only_t = target.valid & ~source.valid
    out[:, only_s] = source.p[:, only_s]
    out[:, only_t] = target.p[:, only_t]
    return PrototypeState(out, source.valid | target.valid, gamma)


def carry_forward(prev: PrototypeState, new: PrototypeState, momentum: float | None = None) -> PrototypeState:
    """Keep the last valid estimate for classes missing from ``new``.

    With ``momentum`` set, classes valid on both sides are smoothed as
    ``momentum * prev + (1 - momentum) * new``. Off by default.
    """
    _check_pair(prev, new)
    out = np.where(new.valid[None, :], new.p, prev.p)
    if momentum is not None:
        if not 0.0 <= momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {momentum}")
        both = prev.valid & new.valid
        out[:, both] = momentum * prev.p[:, both] + (1.0 - momentum) * new.p[:, both]
    history = prev.history + [new.valid.copy()]
    return PrototypeState(out, prev.valid | new.valid, new.gamma, history)
