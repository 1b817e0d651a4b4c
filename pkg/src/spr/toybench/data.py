"""Synthetic source/target domain pairs of per-pixel Gaussian features.

Each image is an H x W grid whose pixels draw a class from the configured
priors and a D-dim feature from that class's isotropic Gaussian. Target
features then pass through the domain shift: per-channel gain, a rotation in
the plane of the first two channels, and a translation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..numerics import IGNORE
from .config import ToyDomainConfig


@dataclass
class DomainData:
    features: np.ndarray  # (n, H, W, D)
    labels: np.ndarray    # (n, H, W)

    @property
    def num_pixels(self) -> int:
        return int(np.prod(self.labels.shape))

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(-1, self.features.shape[-1])


@dataclass
class DomainPair:
    """Labelled source set, unlabelled target features, and hidden target labels.

    ``target_eval_labels`` is read only by evaluation code.
    """

    source: DomainData
    target_features: np.ndarray
    target_eval_labels: np.ndarray
    class_means: np.ndarray

    @property
    def target_eval(self) -> DomainData:
        return DomainData(self.target_features, self.target_eval_labels)


def class_means(cfg: ToyDomainConfig, rng) -> np.ndarray:
    raw = rng.normal(size=(cfg.num_classes, cfg.feature_dim))
    if cfg.num_classes <= cfg.feature_dim:
        q, _ = np.linalg.qr(raw.T)
        directions = q.T[: cfg.num_classes]
    else:
        directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return cfg.class_separation * directions


def priors_of(cfg: ToyDomainConfig) -> np.ndarray:
    if cfg.priors is None:
        return np.full(cfg.num_classes, 1.0 / cfg.num_classes)
    pri = np.asarray(cfg.priors, dtype=float)
    return pri / pri.sum()


def shift_matrix(cfg: ToyDomainConfig):
    """Linear part and offset of the target shift, ``x -> A x + t``."""
    d = cfg.feature_dim
    gain = np.broadcast_to(np.asarray(cfg.gain, dtype=float), (d,))
    theta = np.deg2rad(cfg.rotation_deg)
    rot = np.eye(d)
    rot[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    offset = np.broadcast_to(np.asarray(cfg.translation, dtype=float), (d,)).copy()
    return rot @ np.diag(gain), offset


def apply_shift(features, cfg: ToyDomainConfig) -> np.ndarray:
    a, t = shift_matrix(cfg)
    return features @ a.T + t


def _sample(cfg, means, rng):
    shape = (cfg.num_images, cfg.height, cfg.width)
    labels = rng.choice(cfg.num_classes, size=shape, p=priors_of(cfg))
    noise = rng.normal(scale=cfg.class_spread, size=shape + (cfg.feature_dim,))
    return means[labels] + noise, labels.astype(np.int64)


def generate_domain_pair(cfg: ToyDomainConfig) -> DomainPair:
    """Deterministic in ``cfg.seed``. Label noise flips source labels only."""
    if cfg.num_classes < 2:
        raise ContractError("need at least two classes")
    cfg.validate()
    means_seq, src_seq, tgt_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(4)
    means = class_means(cfg, np.random.default_rng(means_seq))

    src_x, src_y = _sample(cfg, means, np.random.default_rng(src_seq))
    tgt_x, tgt_y = _sample(cfg, means, np.random.default_rng(tgt_seq))
    tgt_x = apply_shift(tgt_x, cfg)

    if cfg.label_noise > 0:
        rng = np.random.default_rng(noise_seq)
        flip = rng.random(src_y.shape) < cfg.label_noise
        src_y = np.where(flip, rng.integers(0, cfg.num_classes, size=src_y.shape), src_y)
    return DomainPair(DomainData(src_x, src_y), tgt_x, tgt_y, means)


def taint_target_labels(pair: DomainPair, seed: int = 12345) -> DomainPair:
    """Copy of ``pair`` whose hidden target labels are replaced with garbage."""
    rng = np.random.default_rng(seed)
    garbage = rng.integers(0, pair.class_means.shape[0], size=pair.target_eval_labels.shape)
    garbage[rng.random(garbage.shape) < 0.1] = IGNORE
    return DomainPair(pair.source, pair.target_features, garbage, pair.class_means)
