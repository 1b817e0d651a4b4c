"""Training loops for the toy benchmark: source-only, SPR adaptation and
self-training, plus evaluation and finite-difference gradient checks."""

from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DivergenceError
from ..losses import LossReport, contrastive_with_grad, cross_entropy_with_grad, total_contrastive
from ..numerics import IGNORE, softmax_rows
from ..pixelalign import (attention_weights, entropy_map, pixel_stats, prototype_pixel_distances,
                          pseudo_labels, reliability_mask, soft_assignment)
from ..prototypes import PrototypeState, blend_prototypes, carry_forward, estimate_prototypes
from ..structure import correlation_distance, structural_regularization
from .config import ExperimentConfig, Schedule, SelfTrainSchedule, SPRParams
from .data import DomainData, DomainPair, generate_domain_pair
from .metrics import Metrics, metrics_from_predictions
from .model import ClassifierParams, backward, embedding_of, forward, forward_cache, init_params

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "l_ce", "l_s", "l_t", "l_c", "target_miou", "corr_dist")


@dataclass
class TraceRow:
    step: int
    report: LossReport
    target_miou: float | None = None
    corr_dist: float | None = None


def trace_csv(rows) -> str:
    """Render trace rows as CSV; unevaluated cells are left empty."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in rows:
        cells = [r.step, r.report.l_ce, r.report.l_s, r.report.l_t, r.report.l_c,
                 r.target_miou, r.corr_dist]
        writer.writerow(["" if v is None else repr(float(v)) if not isinstance(v, int) else v
                         for v in cells])
    return buf.getvalue()


def predict(params: ClassifierParams, features) -> np.ndarray:
    return np.argmax(forward(params, features), axis=-1)


def evaluate(params: ClassifierParams, dataset: DomainData) -> Metrics:
    return metrics_from_predictions(predict(params, dataset.features), dataset.labels,
                                    params.num_classes)


def initial_params(cfg: ExperimentConfig) -> ClassifierParams:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.domain.seed, 1]))
    return init_params(cfg.domain.feature_dim, cfg.domain.num_classes, cfg.model.hidden,
                       rng, cfg.model.init_scale, cfg.model.activation)


def _check_loss(value: float, step: int, what: str):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at step {step}; lower the learning rate")


def _source_step(params, data: DomainData, step: int):
    logits, acts = forward_cache(params, data.features)
    loss, g = cross_entropy_with_grad(logits, data.labels)
    _check_loss(loss, step, "source cross-entropy")
    return loss, backward(params, acts, g)


def train_source_only(cfg: ExperimentConfig, schedule: Schedule | None = None,
                      data: DomainPair | None = None, params: ClassifierParams | None = None,
                      trace: list | None = None):
    """Plain gradient descent on the summed source cross-entropy.

    Returns ``(params, metrics)`` where metrics are measured on the target set.
    """
    cfg = cfg.validate()
    schedule = (schedule or cfg.schedule).validate()
    data = data if data is not None else generate_domain_pair(cfg.domain)
    params = initial_params(cfg) if params is None else params.copy()
    n = data.source.num_pixels
    reports = []
    for step in range(schedule.steps):
        loss, grads = _source_step(params, data.source, step)
        report = LossReport(loss, 0.0, 0.0, 0.0, n, 0)
        reports.append(report)
        if trace is not None:
            miou = None
            if step % schedule.eval_every == 0 or step == schedule.steps - 1:
                miou = evaluate(params, data.target_eval).miou
            trace.append(TraceRow(step, report, miou))
        params = params.axpy(-schedule.lr_at(step) / n, grads)
    metrics = evaluate(params, data.target_eval)
    metrics.loss_trace = reports
    return params, metrics


def spr_objective(params: ClassifierParams, source: DomainData, target_features, p_r, w_s, w_t,
                  target_labels, tau: float, embedding: str = "logits", terms=("ce", "s", "t")):
    """Source cross-entropy plus both contrastive terms, with gradients.

    Prototypes, attention weights and target pseudo labels are constants.
    Terms left out of ``terms`` are reported as 0.
    """
    logits_s, acts_s = forward_cache(params, source.features)
    emb_s = embedding_of(params, logits_s, acts_s, embedding)
    l_ce, g_logits_s = 0.0, np.zeros(logits_s.shape)
    l_s, g_emb_s = 0.0, None
    if "ce" in terms:
        l_ce, g_logits_s = cross_entropy_with_grad(logits_s, source.labels)
    if "s" in terms:
        l_s, g_emb_s = contrastive_with_grad(emb_s, p_r, w_s, source.labels.reshape(-1), tau)
    grads = backward(params, acts_s, g_logits_s, g_emb_s, embedding)

    l_t = 0.0
    labels_t = np.asarray(target_labels).reshape(-1)
    if "t" in terms:
        logits_t, acts_t = forward_cache(params, target_features)
        emb_t = embedding_of(params, logits_t, acts_t, embedding)
        l_t, g_emb_t = contrastive_with_grad(emb_t, p_r, w_t, labels_t, tau)
        zero = np.zeros(logits_t.reshape(-1, logits_t.shape[-1]).shape)
        grads = grads.axpy(1.0, backward(params, acts_t, zero, g_emb_t, embedding))

    report = LossReport(l_ce, l_s, l_t, total_contrastive(l_s, l_t), source.num_pixels,
                        int((labels_t != IGNORE).sum()))
    return report, grads


def source_attention(emb_s, p_r, attention: bool = True):
    """Attention weights for source pixels, from their own entropy map."""
    if not attention:
        return np.ones(emb_s.shape[0])
    q = soft_assignment(prototype_pixel_distances(emb_s, p_r))
    return attention_weights(entropy_map(q))


@dataclass
class SPRDiagnostics:
    arm: str
    corr_trace: list = field(default_factory=list)
    pr_minus_ph: list = field(default_factory=list)
    mask_full: list = field(default_factory=list)
    masked_count: list = field(default_factory=list)
    interaction_bytes: int = 0
    trace: list = field(default_factory=list)
    prototypes: dict = field(default_factory=dict)

    @property
    def corr_initial(self) -> float:
        return self.corr_trace[0][1]

    @property
    def corr_final(self) -> float:
        return self.corr_trace[-1][1]

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "corr_trace": [[s, d] for s, d in self.corr_trace],
            "max_pr_minus_ph": max(self.pr_minus_ph, default=0.0),
            "all_masks_full": bool(all(self.mask_full)),
            "interaction_bytes": self.interaction_bytes,
        }


def arm_name(spr: SPRParams) -> str:
    if spr.lambda_e == 0 and spr.lambda_a == 0 and spr.alpha == 1.0 and not spr.attention:
        return "baseline contrastive"
    return "spr-decoupled" if spr.decoupled else "spr"


def train_spr(cfg: ExperimentConfig, schedule: Schedule | None = None, spr: SPRParams | None = None,
              data: DomainPair | None = None, init: ClassifierParams | None = None):
    """Adapt a classifier with structured prototype regularization.

    Each step: estimate source and target prototypes (target from the previous
    step's pseudo labels, raw-logit argmax on the first step), blend them,
    regularize, compute pixel statistics on the target, then take one
    gradient step on cross-entropy plus the contrastive objective.

    Returns ``(params, metrics, diagnostics)``.
    """
    cfg = cfg.validate()
    schedule = (schedule or cfg.schedule).validate()
    spr = (spr or cfg.spr).validate()
    data = data if data is not None else generate_domain_pair(cfg.domain)
    if init is not None:
        params = init.copy()
    elif spr.init == "source":
        params, _ = train_source_only(cfg, cfg.schedule, data)
    else:
        params = initial_params(cfg)

    c = cfg.domain.num_classes
    embedding = cfg.model.embedding
    src = data.source
    src_labels = src.labels.reshape(-1)
    tgt_x = data.target_features
    n = src.num_pixels
    diag = SPRDiagnostics(arm_name(spr))
    reports = []
    p_s = p_t = None
    y_t = None

    for step in range(schedule.steps):
        logits_s, acts_s = forward_cache(params, src.features)
        logits_t, acts_t = forward_cache(params, tgt_x)
        emb_s = embedding_of(params, logits_s, acts_s, embedding)
        emb_t = embedding_of(params, logits_t, acts_t, embedding)

        est_s = estimate_prototypes(emb_s, src_labels, c, spr.gamma)
        p_s = est_s if p_s is None else carry_forward(p_s, est_s, spr.momentum)
        if y_t is None:
            y_t = np.argmax(softmax_rows(logits_t.reshape(-1, c)), axis=1)
        est_t = estimate_prototypes(emb_t, y_t, c, spr.gamma)
        p_t = est_t if p_t is None else carry_forward(p_t, est_t, spr.momentum)
        p_h = blend_prototypes(p_s, p_t, spr.gamma)

        reg = structural_regularization(p_h.p, p_h.valid, spr.lambda_e, spr.lambda_a,
                                        spr.epsilon, spr.decoupled)
        p_r = reg.p_r
        diag.interaction_bytes = reg.diagnostics["interaction_bytes"]
        stats = pixel_stats(emb_t, p_r, spr.alpha, spr.attention)
        w_s = source_attention(emb_s, p_r, spr.attention)

        keep = p_h.valid
        diag.pr_minus_ph.append(float(np.max(np.abs(p_r[:, keep] - p_h.p[:, keep]), initial=0.0)))
        diag.mask_full.append(bool(stats.mask.all()))
        diag.masked_count.append(stats.masked_count)

        corr = None
        both = p_s.valid & p_t.valid
        if (step % spr.corr_every == 0 or step == schedule.steps - 1) and both.sum() >= 2:
            corr = correlation_distance(p_s.p, p_t.p, both)
            diag.corr_trace.append((step, corr))

        if spr.alternation == "interleave":
            terms = ("ce", "s") if step % 2 == 0 else ("t",)
        else:
            terms = ("ce", "s", "t")
        report, grads = spr_objective(params, src, tgt_x, p_r, w_s, stats.w, stats.labels,
                                      spr.tau, embedding, terms)
        _check_loss(report.l_ce + report.l_c, step, "SPR objective")
        reports.append(report)

        miou = None
        if step % schedule.eval_every == 0 or step == schedule.steps - 1:
            miou = evaluate(params, data.target_eval).miou
        diag.trace.append(TraceRow(step, report, miou, corr))

        params = params.axpy(-schedule.lr_at(step) / n, grads)
        y_t = stats.labels
        if step == schedule.steps - 1:
            diag.prototypes = {"p_s": p_s, "p_t": p_t, "p_h": p_h,
                               "p_r": PrototypeState(p_r, p_h.valid, spr.gamma)}

    metrics = evaluate(params, data.target_eval)
    metrics.loss_trace = reports
    log.info("%s finished: target mIoU %.4f", diag.arm, metrics.miou)
    return params, metrics, diag


def classifier_pseudo_labels(params: ClassifierParams, features, alpha: float):
    """Entropy-filtered argmax labels from the classifier's own softmax."""
    logits = forward(params, features)
    q = softmax_rows(logits.reshape(-1, logits.shape[-1]))
    mask = reliability_mask(entropy_map(q), alpha)
    return pseudo_labels(q, mask), np.argmax(q, axis=1)


def self_training_stage(params: ClassifierParams, cfg: ExperimentConfig,
                        schedule: SelfTrainSchedule | None = None, data: DomainPair | None = None,
                        history: list | None = None):
    """Fine-tune on regenerated, filtered target pseudo labels.

    Once per round the classifier labels the target set, keeping the
    ``floor(alpha * N)`` lowest-entropy pixels; cross-entropy against those
    labels is then minimised for ``steps_per_round`` steps.
    """
    cfg = cfg.validate()
    schedule = (schedule or cfg.self_training).validate()
    data = data if data is not None else generate_domain_pair(cfg.domain)
    params = params.copy()
    tgt_x = data.target_features
    n = int(np.prod(tgt_x.shape[:-1]))
    reports = []
    for rnd in range(schedule.rounds):
        labels, argmax = classifier_pseudo_labels(params, tgt_x, schedule.alpha)
        kept = int((labels != IGNORE).sum())
        if kept == 0:
            raise ContractError(f"alpha={schedule.alpha} keeps no pixel out of {n}")
        if history is not None:
            history.append({"round": rnd, "labels": labels, "argmax": argmax})
        labels = labels.reshape(tgt_x.shape[:-1])
        for step in range(schedule.steps_per_round):
            logits, acts = forward_cache(params, tgt_x)
            loss, g = cross_entropy_with_grad(logits, labels)
            _check_loss(loss, step, "self-training cross-entropy")
            reports.append(LossReport(loss, 0.0, 0.0, 0.0, kept, kept))
            params = params.axpy(-schedule.lr / n, backward(params, acts, g))
    metrics = evaluate(params, data.target_eval)
    metrics.loss_trace = reports
    return params, metrics


def grad_check(params, loss_closure, h: float = 1e-3) -> float:
    """Max over parameters of ``|numeric - analytic| / max(|analytic|, 1e-8)``.

    ``loss_closure(params)`` returns ``(loss, grad)`` where both ``params``
    and ``grad`` are either arrays or :class:`ClassifierParams`. Central
    differences with step ``h``.
    """
    structured = isinstance(params, ClassifierParams)
    theta = params.flat() if structured else np.asarray(params, dtype=np.float64).ravel().copy()
    rebuild = params.with_flat if structured else (
        lambda v: v.reshape(np.shape(params)))

    def value(vec):
        return float(loss_closure(rebuild(vec))[0])

    _, grad = loss_closure(params)
    g = grad.flat() if isinstance(grad, ClassifierParams) else np.asarray(grad, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += h
        minus[i] -= h
        numeric = (value(plus) - value(minus)) / (2 * h)
        worst = max(worst, abs(numeric - g[i]) / max(abs(g[i]), 1e-8))
    return worst
