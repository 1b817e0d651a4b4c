"""Command-line entry point: ``spr <subcommand> ...``.

Exit codes: 0 success, 1 usage error (bad flags, unreadable inputs),
2 numeric or contract failure. ``SPR_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import SPRError
from .losses import LossReport, cross_entropy, total_contrastive
from .numerics import IGNORE
from .pixelalign import pixel_stats
from .prototypes import PrototypeState
from .structure import structural_regularization

log = logging.getLogger("spr")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

DATA_FILES = ("source_features", "source_labels", "target_features", "target_eval_labels",
              "class_means")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False,
                      default=lambda v: v.item() if isinstance(v, np.generic) else str(v))


def _write_json(path, obj):
    io.atomic_write_text(path, _dump_json(obj) + "\n")


# ---------------------------------------------------------------- config

def _load_cfg(args):
    from .toybench import load_config, standard_config
    cfg = load_config(args.config, standard_config()) if args.config else standard_config()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    spr_over = {k: getattr(args, k) for k in ("gamma", "lambda_e", "lambda_a", "alpha", "tau", "epsilon")
                if getattr(args, k, None) is not None}
    if getattr(args, "decoupled", False):
        spr_over["decoupled"] = True
    if spr_over:
        cfg = replace(cfg, spr=replace(cfg.spr, **spr_over))
    sched_over = {k: getattr(args, k) for k in ("steps", "lr") if getattr(args, k, None) is not None}
    if sched_over:
        cfg = replace(cfg, schedule=replace(cfg.schedule, **sched_over))
    st_over = {}
    if getattr(args, "rounds", None) is not None:
        st_over["rounds"] = args.rounds
    if getattr(args, "st_alpha", None) is not None:
        st_over["alpha"] = args.st_alpha
    if st_over:
        cfg = replace(cfg, self_training=replace(cfg.self_training, **st_over))
    return cfg.validate()


def _save_data(directory: Path, pair):
    directory.mkdir(parents=True, exist_ok=True)
    io.write_tensor(directory / "source_features.sprt", pair.source.features)
    io.write_labels(directory / "source_labels.sprt", pair.source.labels)
    io.write_tensor(directory / "target_features.sprt", pair.target_features)
    io.write_labels(directory / "target_eval_labels.sprt", pair.target_eval_labels)
    io.write_tensor(directory / "class_means.sprt", pair.class_means)


def _load_data(directory):
    from .toybench import DomainData, DomainPair
    directory = Path(directory)
    f64 = lambda name: io.read_tensor(directory / f"{name}.sprt").astype(np.float64)  # noqa: E731
    return DomainPair(
        DomainData(f64("source_features"), io.read_labels(directory / "source_labels.sprt")),
        f64("target_features"),
        io.read_labels(directory / "target_eval_labels.sprt"),
        f64("class_means"),
    )


def _data_for(args, cfg):
    from .toybench import generate_domain_pair
    if getattr(args, "data", None):
        return _load_data(args.data)
    return generate_domain_pair(cfg.domain)


def _write_run(out: Path, params, metrics, trace_rows, extra=None):
    from .toybench import trace_csv
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "params")
    report = metrics.to_dict()
    report.pop("loss_trace")
    if extra:
        report.update(extra)
    _write_json(out / "metrics.json", report)
    if trace_rows is not None:
        io.atomic_write_text(out / "metrics.csv", trace_csv(trace_rows))
    return report


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    from .toybench import dump_config, generate_domain_pair
    cfg = _load_cfg(args)
    out = Path(args.out)
    _save_data(out, generate_domain_pair(cfg.domain))
    io.atomic_write_text(out / "config.cfg", dump_config(cfg))
    print(_dump_json({"out": str(out), "files": [f"{n}.sprt" for n in DATA_FILES] + ["config.cfg"]}))


def cmd_train_source(args):
    from .toybench import train_source_only
    cfg = _load_cfg(args)
    data = _data_for(args, cfg)
    trace = []
    params, metrics = train_source_only(cfg, data=data, trace=trace)
    report = _write_run(Path(args.out), params, metrics, trace, {"arm": "source-only"})
    print(_dump_json({"miou": report["miou"], "out": args.out}))


def cmd_train_spr(args):
    from .toybench import ClassifierParams, train_spr
    cfg = _load_cfg(args)
    data = _data_for(args, cfg)
    init = ClassifierParams.load(args.init) if args.init else None
    params, metrics, diag = train_spr(cfg, data=data, init=init)
    out = Path(args.out)
    report = _write_run(out, params, metrics, diag.trace, diag.to_dict())
    if args.dump_prototypes:
        for name, state in diag.prototypes.items():
            io.write_prototypes(out / f"{name}.sprt", state)
    print(_dump_json({"arm": diag.arm, "miou": report["miou"], "out": args.out}))


def cmd_self_train(args):
    from .toybench import ClassifierParams, self_training_stage
    cfg = _load_cfg(args)
    data = _data_for(args, cfg)
    params, metrics = self_training_stage(ClassifierParams.load(args.params), cfg, data=data)
    report = _write_run(Path(args.out), params, metrics, None, {"arm": "self-training"})
    print(_dump_json({"miou": report["miou"], "out": args.out}))


def cmd_eval(args):
    from .toybench import ClassifierParams, evaluate
    cfg = _load_cfg(args)
    data = _data_for(args, cfg)
    report = evaluate(ClassifierParams.load(args.params), data.target_eval).to_dict()
    report.pop("loss_trace")
    if args.out:
        _write_json(args.out, report)
    print(_dump_json(report))


def _read_protos(path) -> PrototypeState:
    if io.sidecar_path(path).exists():
        return io.read_prototypes(path)
    p = io.read_tensor(path)
    return PrototypeState(p, np.ones(p.shape[1], dtype=bool))


def cmd_structure(args):
    state = _read_protos(args.protos)
    reg = structural_regularization(state.p, state.valid, args.lambda_e, args.lambda_a,
                                    args.epsilon, args.decoupled)
    io.write_prototypes(args.out, PrototypeState(reg.p_r, state.valid, state.gamma))
    record = {k: reg.diagnostics[k] for k in ("frobenius_pe", "frobenius_pa", "invalid_classes")}
    if args.diagnostics:
        _write_json(args.diagnostics, record)
    print(_dump_json(record))


def cmd_filter(args):
    logits = io.read_tensor(args.logits)
    p_r = _read_protos(args.protos).p
    lead = logits.shape[:-1]
    stats = pixel_stats(logits.reshape(-1, logits.shape[-1]), p_r, args.alpha, not args.no_attention)
    io.write_labels(args.out_labels, stats.labels.reshape(lead))
    if args.out_entropy:
        io.write_tensor(args.out_entropy, stats.h.reshape(lead))
    if args.out_weights:
        io.write_tensor(args.out_weights, stats.w.reshape(lead))
    print(_dump_json({"pixels": int(stats.h.size), "retained": stats.masked_count, "alpha": args.alpha}))


def cmd_losses(args):
    from .losses import contrastive_with_grad
    from .toybench.train import source_attention
    src = io.read_tensor(args.source_logits).astype(np.float64)
    tgt = io.read_tensor(args.target_logits).astype(np.float64)
    src_labels = io.read_labels(args.source_labels)
    p_r = _read_protos(args.protos).p.astype(np.float64)
    c = src.shape[-1]
    src_flat, tgt_flat = src.reshape(-1, c), tgt.reshape(-1, tgt.shape[-1])
    stats = pixel_stats(tgt_flat, p_r, args.alpha, not args.no_attention)
    w_s = source_attention(src_flat, p_r, not args.no_attention)
    l_ce = cross_entropy(src, src_labels)
    l_s, _ = contrastive_with_grad(src_flat, p_r, w_s, src_labels.reshape(-1), args.tau)
    l_t, _ = contrastive_with_grad(tgt_flat, p_r, stats.w, stats.labels, args.tau)
    report = LossReport(l_ce, l_s, l_t, total_contrastive(l_s, l_t), int(src_flat.shape[0]),
                        int((stats.labels != IGNORE).sum()))
    print(_dump_json(report.to_dict()))


def cmd_acceptance(args):
    from .acceptance import run_suite
    results = run_suite(seed=args.seed, stream=sys.stdout)
    if args.out:
        _write_json(args.out, [r.to_dict() for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


# ---------------------------------------------------------------- parser

def _add_common(p, seed_required=True):
    p.add_argument("--config", help="experiment config file (INI sections, see docs)")
    p.add_argument("--seed", type=int, required=seed_required,
                   help="seed for data generation and parameter init")


def _add_spr_flags(p):
    p.add_argument("--gamma", type=float, help="γ, source/target prototype blend weight (default 0.5)")
    p.add_argument("--lambda-e", dest="lambda_e", type=float,
                   help="λ_e, inter-class regularization strength (default 0.1)")
    p.add_argument("--lambda-a", dest="lambda_a", type=float,
                   help="λ_a, intra-class regularization strength (default 0.1)")
    p.add_argument("--alpha", type=float, help="α, fraction of lowest-entropy target pixels kept (default 0.8)")
    p.add_argument("--tau", type=float, help="τ, similarity temperature (default 1.0)")
    p.add_argument("--eps", dest="epsilon", type=float,
                   help="ε, constant added to interaction diagonals (default 1e-8)")
    p.add_argument("--decoupled", action="store_true",
                   help="use C×C and D×D Gram interactions instead of the full tensors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spr", description="Structured prototype regularization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a source/target toy domain pair")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="supervised training on the source domain")
    _add_common(p)
    p.add_argument("--data", help="directory written by gen-data (default: generate from config)")
    p.add_argument("--steps", type=int, help="gradient steps")
    p.add_argument("--lr", type=float, help="learning rate on the pixel-mean gradient")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("train-spr", help="adapt with structured prototype regularization")
    _add_common(p)
    p.add_argument("--data", help="directory written by gen-data (default: generate from config)")
    p.add_argument("--init", help="params directory to start from (default: train source-only first)")
    p.add_argument("--steps", type=int, help="gradient steps")
    p.add_argument("--lr", type=float, help="learning rate on the pixel-mean gradient")
    _add_spr_flags(p)
    p.add_argument("--dump-prototypes", action="store_true",
                   help="write final p_s, p_t, p_h, p_r as SPRT files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_spr)

    p = sub.add_parser("self-train", help="fine-tune on filtered classifier pseudo labels")
    _add_common(p)
    p.add_argument("--data", help="directory written by gen-data (default: generate from config)")
    p.add_argument("--params", required=True, help="params directory from train-spr")
    p.add_argument("--rounds", type=int, help="pseudo-label regeneration rounds")
    p.add_argument("--alpha", dest="st_alpha", type=float, help="α, fraction of target pixels kept per round")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_self_train)

    p = sub.add_parser("eval", help="target-domain metrics for saved params")
    _add_common(p)
    p.add_argument("--data", help="directory written by gen-data (default: generate from config)")
    p.add_argument("--params", required=True, help="params directory")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("structure", help="regularize a prototype matrix P_h into P_r")
    p.add_argument("--protos", required=True, help="D×C prototype SPRT file (P_h)")
    p.add_argument("--eps", dest="epsilon", type=float, default=1e-8,
                   help="ε, constant added to interaction diagonals")
    p.add_argument("--lambda-e", dest="lambda_e", type=float, default=0.1, help="λ_e, inter-class strength")
    p.add_argument("--lambda-a", dest="lambda_a", type=float, default=0.1, help="λ_a, intra-class strength")
    p.add_argument("--decoupled", action="store_true", help="Gram-matrix interactions")
    p.add_argument("--out", required=True, help="output SPRT file for P_r")
    p.add_argument("--diagnostics", help="also write the JSON record here")
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("filter", help="entropy filtering and pseudo labels for target logits")
    p.add_argument("--logits", required=True, help="H×W×C logits SPRT file")
    p.add_argument("--protos", required=True, help="C×C regularized prototypes P_r")
    p.add_argument("--alpha", type=float, default=0.8, help="α, fraction of lowest-entropy pixels kept")
    p.add_argument("--no-attention", action="store_true", help="force W ≡ 1")
    p.add_argument("--out-labels", required=True, help="pseudo-label SPRT file (u32, IGNORE=0xFFFFFFFF)")
    p.add_argument("--out-entropy", help="entropy map H")
    p.add_argument("--out-weights", help="attention weights W")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("losses", help="print the loss report for a fixture")
    p.add_argument("--source-logits", required=True, help="H×W×C source logits")
    p.add_argument("--source-labels", required=True, help="H×W source label map")
    p.add_argument("--target-logits", required=True, help="H×W×C target logits")
    p.add_argument("--protos", required=True, help="C×C regularized prototypes P_r")
    p.add_argument("--tau", type=float, default=1.0, help="τ, similarity temperature")
    p.add_argument("--alpha", type=float, default=0.8, help="α, fraction of target pixels kept")
    p.add_argument("--no-attention", action="store_true", help="force W ≡ 1")
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("acceptance", help="run the acceptance suite; nonzero exit on any failure")
    p.add_argument("--seed", type=int, default=0, help="base seed for randomized checks")
    p.add_argument("--out", help="also write results as JSON")
    p.set_defaults(func=cmd_acceptance)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SPR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        code = args.func(args)
    except (SPRError, FloatingPointError) as exc:
        print(f"spr {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"spr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
