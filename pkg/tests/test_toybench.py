from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from spr.errors import ContractError, ShapeError
from spr.numerics import IGNORE
from spr.toybench import (ClassifierParams, ExperimentConfig, ModelConfig, Schedule, SelfTrainSchedule,
                          SPRParams, ToyDomainConfig, confusion_matrix, dump_config, evaluate, forward,
                          generate_domain_pair, grad_check, init_params, iou_from_confusion,
                          metrics_from_predictions, parse_config, self_training_stage, spr_objective,
                          standard_config, taint_target_labels, train_source_only, train_spr,
                          zero_params)
from spr.toybench.data import DomainData, priors_of
from spr.toybench.model import forward_cache
from spr.toybench.train import classifier_pseudo_labels, source_attention
from spr.pixelalign import pixel_stats


def small_cfg(seed=0, steps=40, **spr):
    cfg = standard_config(seed)
    dom = replace(cfg.domain, height=8, width=8, num_images=4)
    return replace(cfg, domain=dom, schedule=replace(cfg.schedule, steps=steps),
                   spr=replace(cfg.spr, **spr),
                   self_training=replace(cfg.self_training, rounds=2, steps_per_round=10))


# ------------------------------------------------------------ config

def test_config_round_trip():
    cfg = replace(standard_config(3), spr=replace(standard_config().spr, momentum=0.5, decoupled=True))
    assert parse_config(dump_config(cfg)) == cfg


def test_config_partial_and_errors():
    cfg = parse_config("[spr]\nlambda_e = 0.2\n[shift]\ntranslation = 1, 0, 0, 0\n")
    assert cfg.spr.lambda_e == 0.2 and cfg.domain.translation == (1.0, 0.0, 0.0, 0.0)
    assert cfg.spr.gamma == 0.5
    for bad in ("[spr]\nalpha = 0\n", "[nope]\nx = 1\n", "[spr]\nfoo = 1\n",
                "[domain]\nrotation_deg = 3\n", "[domain]\nnum_classes = 1\n",
                "[spr]\nlambda_e = -1\n", "[model]\nactivation = relu\n"):
        with pytest.raises(ContractError):
            parse_config(bad)


def test_default_hyperparameters():
    spr = SPRParams()
    assert (spr.gamma, spr.lambda_e, spr.lambda_a, spr.alpha, spr.tau) == (0.5, 0.1, 0.1, 0.8, 1.0)
    assert spr.epsilon == 1e-8


def test_poly_schedule():
    s = Schedule(steps=10, lr=1.0, decay="poly", power=0.9)
    assert s.lr_at(0) == 1.0 and s.lr_at(5) == pytest.approx(0.5 ** 0.9)


# ------------------------------------------------------------ data

def test_generation_deterministic():
    a, b = generate_domain_pair(ToyDomainConfig(seed=7)), generate_domain_pair(ToyDomainConfig(seed=7))
    assert np.array_equal(a.source.features, b.source.features)
    assert np.array_equal(a.target_features, b.target_features)
    assert np.array_equal(a.target_eval_labels, b.target_eval_labels)
    c = generate_domain_pair(ToyDomainConfig(seed=8))
    assert not np.array_equal(a.source.features, c.source.features)


def test_identity_shift_same_distribution():
    cfg = ToyDomainConfig(num_images=40, seed=2)
    pair = generate_domain_pair(cfg)
    src, tgt = pair.source.flat_features(), pair.target_features.reshape(-1, cfg.feature_dim)
    se = np.sqrt(2 * cfg.class_spread ** 2 + cfg.class_separation ** 2) / np.sqrt(src.shape[0])
    assert np.all(np.abs(src.mean(0) - tgt.mean(0)) < 5 * se)
    assert cfg.is_identity_shift


def test_class_priors_within_three_sigma():
    cfg = ToyDomainConfig(num_classes=3, priors=(0.5, 0.3, 0.2), num_images=2)
    p = priors_of(cfg)
    n_px = cfg.height * cfg.width
    counts = np.zeros(3)
    for seed in range(100):
        labels = generate_domain_pair(replace(cfg, seed=seed)).source.labels
        counts += np.stack([np.bincount(img.ravel(), minlength=3) for img in labels]).sum(0)
    per_image = counts / (100 * cfg.num_images)
    sigma = np.sqrt(n_px * p * (1 - p) / (100 * cfg.num_images))
    assert np.all(np.abs(per_image - n_px * p) < 3 * sigma)


def test_label_noise_touches_source_only():
    cfg = ToyDomainConfig(seed=4)
    clean, noisy = generate_domain_pair(cfg), generate_domain_pair(replace(cfg, label_noise=0.3))
    assert np.array_equal(clean.target_eval_labels, noisy.target_eval_labels)
    assert not np.array_equal(clean.source.labels, noisy.source.labels)


def test_degenerate_config():
    with pytest.raises(ContractError):
        generate_domain_pair(ToyDomainConfig(num_classes=1))


# ------------------------------------------------------------ model

def test_zero_params_give_uniform_softmax():
    logits = forward(zero_params(3, 4, (5,)), np.ones((2, 2, 3)))
    assert np.all(logits == 0.0)


def test_identity_weights():
    params = ClassifierParams([np.eye(3)], [np.zeros(3)])
    x = np.random.default_rng(0).normal(size=(2, 4, 3))
    npt.assert_array_equal(forward(params, x), x)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "softplus"])
def test_forward_matches_loop(activation):
    rng = np.random.default_rng(1)
    params = init_params(3, 2, (4, 3), rng, activation=activation)
    x = rng.normal(size=(2, 3, 3))
    f = {"tanh": np.tanh, "sigmoid": lambda z: 1 / (1 + np.exp(-z)),
         "softplus": lambda z: np.log1p(np.exp(z))}[activation]
    out = forward(params, x)
    for idx in np.ndindex(2, 3):
        a = x[idx]
        for w, b in zip(params.weights[:-1], params.biases[:-1]):
            a = f(a @ w + b)
        npt.assert_allclose(out[idx], a @ params.weights[-1] + params.biases[-1], atol=1e-6)


def test_shape_errors():
    with pytest.raises(ShapeError):
        forward(init_params(3, 2), np.zeros((2, 4)))
    with pytest.raises(ContractError):
        init_params(3, 2, (2, 2, 2))


def test_params_save_load(tmp_path):
    params = init_params(3, 2, (4,), np.random.default_rng(0), activation="sigmoid")
    params.save(tmp_path)
    back = ClassifierParams.load(tmp_path)
    assert back.activation == "sigmoid"
    for a, b in zip(back.arrays(), params.arrays()):
        npt.assert_allclose(a, b, rtol=1e-6)


# ------------------------------------------------------------ metrics

def test_metric_examples():
    gt = np.array([0, 0, 1, 1])
    assert metrics_from_predictions(gt, gt, 2).miou == 1.0
    m = metrics_from_predictions(np.zeros(4, int), gt, 2)
    npt.assert_allclose(m.per_class_iou, [0.5, 0.0])
    assert m.miou == 0.25


def test_confusion_matches_tally(rng):
    pred, gt = rng.integers(0, 4, 200), rng.integers(-1, 4, 200)
    tally = np.zeros((4, 4), int)
    for p, g in zip(pred, gt):
        if g != IGNORE:
            tally[g, p] += 1
    npt.assert_array_equal(confusion_matrix(pred, gt, 4), tally)


def test_absent_class_excluded():
    iou, miou = iou_from_confusion(np.array([[3, 0, 0], [0, 2, 0], [0, 0, 0]]))
    assert np.isnan(iou[2]) and miou == 1.0
    assert metrics_from_predictions([0, 1], [0, 1], 3).to_dict()["per_class_iou"][2] is None


# ------------------------------------------------------------ training

def test_separable_source_reaches_high_accuracy():
    cfg = ExperimentConfig(domain=ToyDomainConfig(class_separation=8.0, class_spread=0.5, seed=1),
                           schedule=Schedule(steps=300, lr=0.5))
    data = generate_domain_pair(cfg.domain)
    params, _ = train_source_only(cfg, data=data)
    assert evaluate(params, data.source).accuracy > 0.99


def test_zero_steps_and_zero_rounds_leave_params():
    cfg = small_cfg()
    data = generate_domain_pair(cfg.domain)
    init = init_params(4, 4, (8,), np.random.default_rng(0), activation="sigmoid")
    params, _ = train_source_only(cfg, Schedule(steps=0), data, init)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), init.arrays()))
    params, _ = self_training_stage(init, cfg, SelfTrainSchedule(rounds=0), data)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), init.arrays()))


def test_linear_model_loss_non_increasing():
    cfg = ExperimentConfig(domain=ToyDomainConfig(seed=3), schedule=Schedule(steps=50, lr=1e-3))
    _, metrics = train_source_only(cfg)
    losses = [r.l_ce for r in metrics.loss_trace]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_train_spr_is_deterministic_and_blind_to_target_labels():
    cfg = small_cfg(seed=2)
    data = generate_domain_pair(cfg.domain)
    init, _ = train_source_only(cfg, data=data)
    p1, _, d1 = train_spr(cfg, data=data, init=init)
    p2, _, d2 = train_spr(cfg, data=taint_target_labels(data), init=init)
    for a, b in zip(p1.arrays(), p2.arrays()):
        assert np.array_equal(a, b)
    assert [r.report for r in d1.trace] == [r.report for r in d2.trace]


def test_baseline_arm_is_structural_identity():
    cfg = small_cfg(steps=15, lambda_e=0.0, lambda_a=0.0, alpha=1.0, attention=False)
    _, metrics, diag = train_spr(cfg)
    assert diag.arm == "baseline contrastive"
    assert max(diag.pr_minus_ph) == 0.0 and all(diag.mask_full)
    assert np.isfinite(metrics.miou)


def test_spr_run_records_diagnostics():
    _, _, diag = train_spr(small_cfg(steps=25))
    assert diag.arm == "spr"
    assert all(np.isfinite(d) for _, d in diag.corr_trace)
    assert diag.corr_trace[-1][0] == 24
    assert diag.masked_count[0] == int(0.8 * 256)
    assert diag.interaction_bytes == (8 * 16 + 4 * 64) * 8
    assert set(diag.prototypes) == {"p_s", "p_t", "p_h", "p_r"}


def test_decoupled_and_interleaved_variants_run():
    _, m, diag = train_spr(small_cfg(steps=10, decoupled=True, alternation="interleave"))
    assert diag.arm == "spr-decoupled" and np.isfinite(m.miou)


def test_self_training_labels_change_only_with_argmax():
    cfg = small_cfg()
    data = generate_domain_pair(cfg.domain)
    params, _ = train_source_only(cfg, data=data)
    history = []
    self_training_stage(params, cfg, data=data, history=history)
    for prev, cur in zip(history, history[1:]):
        both = (prev["labels"] != IGNORE) & (cur["labels"] != IGNORE)
        changed = both & (prev["labels"] != cur["labels"])
        assert np.all(prev["argmax"][changed] != cur["argmax"][changed])


def test_classifier_pseudo_labels_keep_alpha_fraction():
    params = init_params(4, 4, (), np.random.default_rng(0))
    labels, _ = classifier_pseudo_labels(params, np.random.default_rng(1).normal(size=(2, 5, 5, 4)), 0.8)
    assert (labels != IGNORE).sum() == 40


# ------------------------------------------------------------ gradient checks

def test_grad_check_quadratic():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    x0 = np.array([0.3, -1.2])
    assert grad_check(x0, lambda x: (0.5 * x @ a @ x, a @ x)) < 1e-6


def _instance(seed, hidden, activation):
    rng = np.random.default_rng(seed)
    params = init_params(3, 3, hidden, rng, activation=activation)
    src = DomainData(rng.normal(size=(1, 4, 4, 3)), rng.integers(0, 3, size=(1, 4, 4)))
    tgt = rng.normal(size=(1, 4, 4, 3))
    p_r = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    stats = pixel_stats(forward(params, tgt).reshape(-1, 3), p_r, 0.8)
    w_s = source_attention(forward(params, src.features).reshape(-1, 3), p_r)
    return params, src, tgt, p_r, w_s, stats


@pytest.mark.parametrize("hidden,activation", [((), "tanh"), ((4,), "tanh"), ((4,), "softplus")])
def test_grad_check_cross_entropy(hidden, activation):
    params, src, *_ = _instance(5, hidden, activation)

    def closure(p):
        r, g = spr_objective(p, src, None, None, None, None, None, 1.0, terms=("ce",))
        return r.l_ce, g

    assert grad_check(params, closure) < 1e-4


@pytest.mark.parametrize("embedding", ["logits", "hidden"])
def test_grad_check_contrastive(embedding):
    params, src, tgt, p_r, w_s, stats = _instance(6, (3,), "tanh")

    def closure(p):
        r, g = spr_objective(p, src, tgt, p_r, w_s, stats.w, stats.labels, 0.8, embedding,
                             terms=("s", "t"))
        return r.l_c, g

    assert grad_check(params, closure) < 1e-4
