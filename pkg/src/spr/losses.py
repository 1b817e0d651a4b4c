"""Source cross-entropy and the attention-weighted prototype contrastive loss.

All losses are sums over pixels. The ``*_with_grad`` variants also return
the gradient with respect to the logits / embeddings; prototypes, attention
weights and labels are treated as constants (stop-gradient).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import IGNORE, as_tensor, log_softmax_rows

DEFAULT_TAU = 1.0


@dataclass
class SimilarityTensor:
    s: np.ndarray
    tau: float
    log_s: np.ndarray | None = None


@dataclass
class LossReport:
    l_ce: float
    l_s: float
    l_t: float
    l_c: float
    pixel_count: int
    masked_count: int

    @property
    def l_ce_mean(self) -> float:
        return self.l_ce / max(self.pixel_count, 1)

    @property
    def l_t_mean(self) -> float:
        return self.l_t / max(self.masked_count, 1)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["l_ce_mean"] = self.l_ce_mean
        out["l_t_mean"] = self.l_t_mean
        return out


def one_hot(labels, num_classes: int) -> np.ndarray:
    """One-hot encoding with all-zero rows for IGNORE pixels."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float32)
    keep = labels != IGNORE
    if np.any(keep & ((labels < 0) | (labels >= num_classes))):
        raise ContractError(f"labels outside 0..{num_classes - 1}")
    idx = np.nonzero(keep)
    out[idx + (labels[keep],)] = 1.0
    return out


def _flat_labels(labels, lead_shape, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != lead_shape:
        raise ShapeError(f"labels {labels.shape} do not match pixels {lead_shape}")
    flat = labels.reshape(-1)
    if np.any((flat != IGNORE) & ((flat < 0) | (flat >= num_classes))):
        raise ContractError(f"labels outside 0..{num_classes - 1}")
    return flat


def cross_entropy_with_grad(logits, labels):
    """Summed pixel-wise cross-entropy and its gradient w.r.t. ``logits``."""
    logits = as_tensor(logits)
    c = logits.shape[-1]
    flat = logits.reshape(-1, c)
    lab = _flat_labels(labels, logits.shape[:-1], c)
    keep = lab != IGNORE
    if not keep.any():
        raise ContractError("cross_entropy needs at least one labeled pixel")
    logp = log_softmax_rows(flat.astype(np.float64))
    rows = np.flatnonzero(keep)
    loss = -float(logp[rows, lab[rows]].sum())
    grad = np.exp(logp)
    grad[rows, lab[rows]] -= 1.0
    grad[~keep] = 0.0
    return loss, grad.reshape(logits.shape).astype(logits.dtype, copy=False)


def cross_entropy(logits, labels, reduction: str = "sum") -> float:
    loss, _ = cross_entropy_with_grad(logits, labels)
    if reduction == "sum":
        return loss
    if reduction == "mean":
        n = int((np.asarray(labels) != IGNORE).sum())
        return loss / n
    raise ValueError(f"unknown reduction {reduction!r}")


def _similarity_logits(embed, p_r, w, tau):
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    embed = as_tensor(embed)
    p_r = as_tensor(p_r)
    if p_r.ndim != 2 or embed.shape[-1] != p_r.shape[0]:
        raise ShapeError(f"embeddings {embed.shape} incompatible with prototypes {p_r.shape}")
    flat = embed.reshape(-1, embed.shape[-1]).astype(np.float64)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != flat.shape[0]:
        raise ShapeError(f"{w.shape[0]} weights for {flat.shape[0]} pixels")
    scale = w / tau
    return flat @ p_r.astype(np.float64) * scale[:, None], flat, scale


def prototype_similarity(embed, p_r, w, tau: float = DEFAULT_TAU) -> SimilarityTensor:
    """Per-pixel softmax over ``(p_r[:, c] . embed(x)) * w(x) / tau``."""
    z, _, _ = _similarity_logits(embed, p_r, w, tau)
    lead = np.shape(embed)[:-1]
    log_s = log_softmax_rows(z)
    return SimilarityTensor(np.exp(log_s).reshape(lead + (z.shape[1],)), tau,
                            log_s.reshape(lead + (z.shape[1],)))


def contrastive_loss(s, onehot) -> float:
    """``-sum onehot * log s``; IGNORE pixels carry all-zero one-hot rows."""
    if isinstance(s, SimilarityTensor):
        log_s = s.log_s if s.log_s is not None else np.log(s.s)
        probs = s.s
    else:
        probs = np.asarray(s)
        log_s = None
    onehot = np.asarray(onehot)
    if onehot.shape != np.shape(probs):
        raise ShapeError(f"one-hot {onehot.shape} does not match similarity {np.shape(probs)}")
    sel = onehot > 0
    if log_s is None:
        log_s = np.log(np.where(sel, probs, 1.0))
    return -float(np.where(sel, log_s, 0.0).astype(np.float64).sum())


def contrastive_with_grad(embed, p_r, w, labels, tau: float = DEFAULT_TAU):
    """Contrastive loss and its gradient w.r.t. ``embed``."""
    z, flat, scale = _similarity_logits(embed, p_r, w, tau)
    c = z.shape[1]
    lab = _flat_labels(labels, np.shape(embed)[:-1], c)
    keep = lab != IGNORE
    rows = np.flatnonzero(keep)
    log_s = log_softmax_rows(z)
    loss = -float(log_s[rows, lab[rows]].sum())
    dz = np.exp(log_s)
    dz[rows, lab[rows]] -= 1.0
    dz[~keep] = 0.0
    d_embed = (dz @ np.asarray(p_r, dtype=np.float64).T) * scale[:, None]
    return loss, d_embed.reshape(np.shape(embed))


def total_contrastive(l_s: float, l_t: float) -> float:
    if not (np.isfinite(l_s) and np.isfinite(l_t)):
        raise ContractError("contrastive terms must be finite")
    return l_s + l_t
