"""The acceptance suite: ten checks run at their stated tolerances.

Each check returns a :class:`Result`; :func:`run_suite` prints one
``PASS``/``FAIL`` line per check. Oracles here are written independently of
the library code they check (explicit loops, hand-expanded values).
"""

from __future__ import annotations

import contextlib
import hashlib
import io as _io
import math
import sys
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .losses import contrastive_with_grad, cross_entropy, total_contrastive
from .numerics import IGNORE
from .pixelalign import (attention_weights, entropy_map, pixel_stats, reliability_mask,
                         soft_assignment)
from .prototypes import estimate_prototypes
from .structure import (StorageAccounting, inter_class_interaction, interaction_storage_bytes,
                        intra_class_interaction, normalize_inter, normalize_intra,
                        structural_regularization, weighted_prototypes)

NUM_SEEDS = 5


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail}"

    def to_dict(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3)}


# ------------------------------------------------------------------ oracles

def brute_force_prototypes(logits, labels, num_classes):
    """Per-pixel loop: running sums and counts, class by class."""
    h, w, d = logits.shape
    sums = [[0.0] * d for _ in range(num_classes)]
    counts = [0] * num_classes
    for i in range(h):
        for j in range(w):
            c = int(labels[i, j])
            if c == IGNORE:
                continue
            counts[c] += 1
            for k in range(d):
                sums[c][k] += float(logits[i, j, k])
    p = np.zeros((d, num_classes))
    for c in range(num_classes):
        for k in range(d):
            p[k, c] = sums[c][k] / counts[c] if counts[c] else 0.0
    return p, np.array([n > 0 for n in counts])


# hand expansion for P_h = [[1, 2], [0, 3]], epsilon -> 0, lambda = 0.1
WORKED_P_H = np.array([[1.0, 2.0], [0.0, 3.0]])
WORKED = {
    "r_e": np.array([[[1, 2], [2, 4]], [[0, 0], [0, 9]]], dtype=float),
    "r_e_norm": np.array([[[1, 2], [0.5, 1]], [[0, 0], [0, 1]]], dtype=float),
    "r_a": np.array([[[1, 0], [0, 0]], [[4, 6], [6, 9]]], dtype=float),
    "r_a_norm": np.array([[[1, 0], [0, 0]], [[1, 1.5], [2 / 3, 1]]], dtype=float),
    "p_e": np.array([[5, 2.5], [0, 3]], dtype=float),
    "p_a": np.array([[1, 6.5], [0, 13 / 3]], dtype=float),
    "p_r": np.array([[1 - 0.5 - 0.1, 2 - 0.25 - 0.65], [0, 3 - 0.3 - 13 / 30]], dtype=float),
}


# ------------------------------------------------------------------ criteria

def check_prototypes(seed: int) -> Result:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        h, w = rng.integers(1, 17, size=2)
        c, d = int(rng.integers(2, 7)), int(rng.integers(1, 9))
        logits = rng.normal(scale=3.0, size=(h, w, d))
        labels = rng.integers(-1, c, size=(h, w))
        got = estimate_prototypes(logits, labels, c)
        want, valid = brute_force_prototypes(logits, labels, c)
        if not np.array_equal(got.valid, valid):
            return Result(1, "prototype oracle", False, "validity flags differ")
        worst = max(worst, float(np.max(np.abs(np.asarray(got.p, dtype=np.float64) - want))))
    return Result(1, "prototype oracle", worst <= 1e-6, f"max abs error {worst:.2e} over 50 instances")


def check_structure(seed: int) -> Result:
    eps = 1e-12
    r_e = inter_class_interaction(WORKED_P_H)
    r_a = intra_class_interaction(WORKED_P_H)
    r_e_norm = normalize_inter(r_e, eps)
    r_a_norm = normalize_intra(r_a, eps)
    p_e, p_a = weighted_prototypes(r_e_norm, r_a_norm, WORKED_P_H)
    p_r = structural_regularization(WORKED_P_H, None, 0.1, 0.1, eps).p_r
    got = {"r_e": r_e, "r_e_norm": r_e_norm, "r_a": r_a, "r_a_norm": r_a_norm,
           "p_e": p_e, "p_a": p_a, "p_r": p_r}
    errs = {k: float(np.max(np.abs(got[k] - v))) for k, v in WORKED.items()}
    off = float(np.max(np.abs(structural_regularization(WORKED_P_H, None, 0.0, 0.0).p_r - WORKED_P_H)))
    ok = max(errs.values()) <= 1e-6 and off <= 1e-12
    return Result(2, "structure worked example", ok,
                  f"max error {max(errs.values()):.2e}; lambda=0 deviation {off:.1e}")


def check_pixel_stats(seed: int) -> Result:
    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(20):
        n, c = int(rng.integers(1, 300)), int(rng.integers(2, 9))
        x = rng.normal(scale=2.0, size=(n, c))
        p = rng.normal(scale=2.0, size=(c, c))
        stats = pixel_stats(x, p, 0.8)
        if np.max(np.abs(stats.q.sum(axis=1) - 1.0)) > 1e-6:
            problems.append("Q rows")
        if stats.h.min() < 0 or stats.h.max() > math.log(c) + 1e-6:
            problems.append("H range")
        uniform = entropy_map(soft_assignment(np.zeros((3, c))))
        if np.max(np.abs(uniform - math.log(c))) > 1e-6:
            problems.append("uniform H")
        s = float(rng.uniform(0.01, 100.0))
        if np.max(np.abs(attention_weights(s * stats.h) - attention_weights(stats.h))) > 1e-6:
            problems.append("W scale")
    for _ in range(1000):
        n = int(rng.integers(1, 2000))
        alpha = float(rng.uniform(0.0, 1.0)) or 0.5
        h = rng.random(n)
        if reliability_mask(h, alpha).sum() != math.floor(alpha * n):
            problems.append(f"mask N={n} alpha={alpha}")
            break
    ok = not problems
    return Result(3, "pixel-stat contracts", ok, "all hold" if ok else ", ".join(sorted(set(problems))))


def check_losses(seed: int) -> Result:
    rng = np.random.default_rng(seed)
    worst_sum = worst_uniform = 0.0
    for _ in range(20):
        c = int(rng.integers(2, 7))
        h, w = rng.integers(2, 9, size=2)
        src, tgt = rng.normal(size=(h, w, c)), rng.normal(size=(h, w, c))
        labels = rng.integers(0, c, size=(h, w))
        p_r = rng.normal(size=(c, c))
        stats = pixel_stats(tgt.reshape(-1, c), p_r, 0.8)
        l_s, _ = contrastive_with_grad(src, p_r, np.ones(h * w), labels, 1.0)
        l_t, _ = contrastive_with_grad(tgt.reshape(-1, c), p_r, stats.w, stats.labels, 1.0)
        worst_sum = max(worst_sum, abs(total_contrastive(l_s, l_t) - (l_s + l_t)))
        flat = cross_entropy(np.zeros((h, w, c)), labels)
        worst_uniform = max(worst_uniform, abs(flat - h * w * math.log(c)))
    ok = worst_sum <= 1e-6 and worst_uniform <= 1e-5
    return Result(4, "loss identities", ok,
                  f"|l_c - l_s - l_t| {worst_sum:.1e}; uniform CE error {worst_uniform:.1e}")


def check_gradients(seed: int) -> Result:
    from .toybench import DomainData, grad_check, init_params, spr_objective
    from .toybench.model import forward
    from .toybench.train import source_attention
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([seed, i])
        c, d = int(rng.integers(2, 4)), int(rng.integers(2, 5))
        hidden = () if i % 2 == 0 else (3,)
        activation = ("tanh", "sigmoid", "softplus")[i % 3]
        params = init_params(d, c, hidden, rng, 1.0, activation)
        src = DomainData(rng.normal(size=(1, 4, 4, d)), rng.integers(0, c, size=(1, 4, 4)))
        tgt = rng.normal(size=(1, 4, 4, d))
        p_r = rng.normal(size=(c, c)) + 2.0 * np.eye(c)
        stats = pixel_stats(forward(params, tgt).reshape(-1, c), p_r, 0.8)
        w_s = source_attention(forward(params, src.features).reshape(-1, c), p_r)

        def closure(p):
            report, grads = spr_objective(p, src, tgt, p_r, w_s, stats.w, stats.labels, 1.0)
            return report.l_ce + report.l_c, grads

        worst = max(worst, grad_check(params, closure, 1e-3))
    return Result(5, "gradient check", worst < 1e-4, f"max relative error {worst:.2e} over 20 instances")


def directional_runs(num_seeds: int = NUM_SEEDS, cfg_for=None):
    """Source-only, SPR and SPR+ST on the standard config, one row per seed."""
    from .toybench import generate_domain_pair, standard_config
    from .toybench.train import self_training_stage, train_source_only, train_spr
    cfg_for = cfg_for or standard_config
    rows = []
    for seed in range(num_seeds):
        cfg = cfg_for(seed)
        data = generate_domain_pair(cfg.domain)
        p0, m0 = train_source_only(cfg, data=data)
        p1, m1, diag = train_spr(cfg, data=data, init=p0)
        _, m2 = self_training_stage(p1, cfg, data=data)
        rows.append({"seed": seed, "source": m0.miou, "spr": m1.miou, "spr_st": m2.miou,
                     "corr_initial": diag.corr_initial, "corr_final": diag.corr_final})
    return rows


def _mean(rows, key):
    return float(np.mean([r[key] for r in rows]))


def check_adaptation(rows) -> Result:
    src, spr, st = _mean(rows, "source"), _mean(rows, "spr"), _mean(rows, "spr_st")
    return Result(6, "adaptation direction", spr > src and st >= spr,
                  f"mean mIoU source {src:.4f} < SPR {spr:.4f} <= SPR+ST {st:.4f} ({len(rows)} seeds)")


def check_baseline_arm(seed: int) -> Result:
    from .toybench import standard_config
    from .toybench.train import train_spr
    cfg = standard_config(seed)
    spr = replace(cfg.spr, lambda_e=0.0, lambda_a=0.0, alpha=1.0, attention=False)
    _, metrics, diag = train_spr(replace(cfg, schedule=replace(cfg.schedule, steps=60)), spr=spr)
    exact = max(diag.pr_minus_ph) == 0.0
    full = all(diag.mask_full)
    ok = exact and full and diag.arm == "baseline contrastive" and np.isfinite(metrics.miou)
    return Result(7, "ablation switch-off", ok,
                  f"arm {diag.arm!r}; max |P_r - P_h| {max(diag.pr_minus_ph):.1e}; "
                  f"mask full at {sum(diag.mask_full)}/{len(diag.mask_full)} steps")


def check_correlation(rows) -> Result:
    first, last = _mean(rows, "corr_initial"), _mean(rows, "corr_final")
    return Result(8, "correlation diagnostic", last < first,
                  f"mean corr distance {first:.4f} at start, {last:.4f} at end ({len(rows)} seeds)")


def check_storage(seed: int) -> Result:
    d, c = 256, 19
    p_h = np.random.default_rng(seed).normal(size=(d, c)).astype(np.float32)
    full, dec = StorageAccounting(), StorageAccounting()
    structural_regularization(p_h, storage=full)
    structural_regularization(p_h, decoupled=True, storage=dec)
    want_full = (d * c * c + c * d * d) * 4
    want_dec = (c * c + d * d) * 4
    ok = (full.total_bytes == want_full == interaction_storage_bytes(d, c)
          and dec.total_bytes == want_dec == interaction_storage_bytes(d, c, decoupled=True))
    return Result(9, "decoupled accounting", ok,
                  f"full {full.total_bytes} B (want {want_full}), decoupled {dec.total_bytes} B (want {want_dec})")


def check_determinism(seed: int) -> Result:
    from .cli import main
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            out = Path(tmp) / run
            with contextlib.redirect_stdout(_io.StringIO()):
                code = main(["train-spr", "--seed", str(seed), "--steps", "60", "--out", str(out)])
            if code != 0:
                return Result(10, "determinism", False, f"train-spr exited {code}")
            digests.append(hashlib.sha256((out / "metrics.csv").read_bytes()).hexdigest())
    return Result(10, "determinism", digests[0] == digests[1],
                  f"metrics.csv sha256 {digests[0][:16]} vs {digests[1][:16]}")


def _timed(fn, *args) -> Result:
    start = time.perf_counter()
    res = fn(*args)
    res.seconds = time.perf_counter() - start
    return res


def run_suite(seed: int = 0, stream=None) -> list[Result]:
    stream = stream if stream is not None else sys.stdout
    results = []

    def emit(res):
        results.append(res)
        print(res.line(), file=stream, flush=True)

    for fn in (check_prototypes, check_structure, check_pixel_stats, check_losses, check_gradients):
        emit(_timed(fn, seed))
    start = time.perf_counter()
    rows = directional_runs()
    shared = time.perf_counter() - start
    res = check_adaptation(rows)
    res.seconds = shared
    emit(res)
    emit(_timed(check_baseline_arm, seed))
    emit(check_correlation(rows))
    emit(_timed(check_storage, seed))
    emit(_timed(check_determinism, seed))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed", file=stream, flush=True)
    return results
