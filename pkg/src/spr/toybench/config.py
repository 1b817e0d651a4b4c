"""Experiment configuration and its key=value file format.

The file is INI-style text read with :mod:`configparser`. Sections and keys::

    [domain]    num_classes, feature_dim, height, width, num_images,
                class_separation, class_spread, priors (comma list), seed
    [shift]     rotation_deg, translation (scalar or list), gain (scalar or list),
                label_noise
    [model]     hidden (comma list, 0-2 entries), embedding (logits|hidden),
                activation (tanh|sigmoid|softplus), init_scale
    [schedule]  steps, lr, decay (constant|poly), power, eval_every
    [spr]       gamma, lambda_e, lambda_a, alpha, tau, epsilon, decoupled,
                attention, momentum, init (source|cold), corr_every, alternation
    [self_training]  rounds, steps_per_round, lr, alpha

Every key is optional; missing keys keep the defaults below. Lists are comma
separated, booleans accept true/false/yes/no/1/0. ``momentum = none`` disables
momentum blending.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class ToyDomainConfig:
    num_classes: int = 4
    feature_dim: int = 4
    height: int = 16
    width: int = 16
    num_images: int = 8
    class_separation: float = 3.0
    class_spread: float = 1.0
    priors: tuple | None = None
    rotation_deg: float = 0.0
    translation: tuple = (0.0,)
    gain: tuple = (1.0,)
    label_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if not 2 <= self.num_classes <= 8:
            raise ContractError(f"num_classes must be in 2..8, got {self.num_classes}")
        if not 2 <= self.feature_dim <= 16:
            raise ContractError(f"feature_dim must be in 2..16, got {self.feature_dim}")
        if min(self.height, self.width, self.num_images) < 1:
            raise ContractError("grid and image count must be positive")
        if self.class_spread < 0:
            raise ContractError("class_spread must be non-negative")
        if not 0.0 <= self.label_noise < 1.0:
            raise ContractError(f"label_noise must lie in [0, 1), got {self.label_noise}")
        if self.priors is not None:
            pri = np.asarray(self.priors, dtype=float)
            if pri.shape != (self.num_classes,) or np.any(pri < 0) or pri.sum() <= 0:
                raise ContractError("priors must list one non-negative weight per class")
        for name in ("translation", "gain"):
            if len(getattr(self, name)) not in (1, self.feature_dim):
                raise ContractError(f"{name} needs 1 or {self.feature_dim} entries")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")
        return self

    @property
    def is_identity_shift(self) -> bool:
        return (self.rotation_deg == 0 and all(t == 0 for t in self.translation)
                and all(g == 1 for g in self.gain))


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = ()
    embedding: str = "logits"
    activation: str = "tanh"
    init_scale: float = 1.0

    def validate(self):
        if len(self.hidden) > 2 or any(h < 1 for h in self.hidden):
            raise ContractError("hidden must list at most two positive widths")
        if self.embedding not in ("logits", "hidden"):
            raise ContractError(f"embedding must be logits or hidden, got {self.embedding!r}")
        if self.embedding == "hidden" and not self.hidden:
            raise ContractError("hidden embedding needs at least one hidden layer")
        if self.activation not in ("tanh", "sigmoid", "softplus"):
            raise ContractError(f"activation must be tanh, sigmoid or softplus, got {self.activation!r}")
        return self


@dataclass(frozen=True)
class Schedule:
    """Gradient-descent schedule. ``lr`` multiplies the pixel-mean gradient."""

    steps: int = 200
    lr: float = 0.5
    decay: str = "constant"
    power: float = 0.9
    eval_every: int = 10

    def validate(self):
        if self.steps < 0:
            raise ContractError("steps must be non-negative")
        if not self.lr > 0:
            raise ContractError("lr must be positive")
        if self.decay not in ("constant", "poly"):
            raise ContractError(f"decay must be constant or poly, got {self.decay!r}")
        if self.eval_every < 1:
            raise ContractError("eval_every must be at least 1")
        return self

    def lr_at(self, step: int) -> float:
        if self.decay == "poly" and self.steps:
            return self.lr * (1.0 - step / self.steps) ** self.power
        return self.lr


@dataclass(frozen=True)
class SPRParams:
    gamma: float = 0.5
    lambda_e: float = 0.1
    lambda_a: float = 0.1
    alpha: float = 0.8
    tau: float = 1.0
    epsilon: float = 1e-8
    decoupled: bool = False
    attention: bool = True
    momentum: float | None = None
    init: str = "source"
    corr_every: int = 10
    alternation: str = "joint"

    def validate(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lambda_e < 0 or self.lambda_a < 0:
            raise ContractError("lambda_e and lambda_a must be non-negative")
        if not 0.0 < self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if self.momentum is not None and not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if self.init not in ("source", "cold"):
            raise ContractError(f"init must be source or cold, got {self.init!r}")
        if self.corr_every < 1:
            raise ContractError("corr_every must be at least 1")
        if self.alternation not in ("joint", "interleave"):
            raise ContractError(f"alternation must be joint or interleave, got {self.alternation!r}")
        return self


@dataclass(frozen=True)
class SelfTrainSchedule:
    rounds: int = 3
    steps_per_round: int = 50
    lr: float = 0.5
    alpha: float = 0.8

    def validate(self):
        if self.rounds < 0 or self.steps_per_round < 0:
            raise ContractError("rounds and steps_per_round must be non-negative")
        if not self.lr > 0:
            raise ContractError("lr must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in (0, 1], got {self.alpha}")
        return self


@dataclass(frozen=True)
class ExperimentConfig:
    domain: ToyDomainConfig = field(default_factory=ToyDomainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: Schedule = field(default_factory=Schedule)
    spr: SPRParams = field(default_factory=SPRParams)
    self_training: SelfTrainSchedule = field(default_factory=SelfTrainSchedule)

    def validate(self):
        for part in (self.domain, self.model, self.schedule, self.spr, self.self_training):
            part.validate()
        return self

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, domain=replace(self.domain, seed=seed))


def standard_config(seed: int = 0) -> ExperimentConfig:
    """The shifted-Gaussian benchmark used by the directional checks.

    Prototypes live in an 8-unit sigmoid layer so their entries are positive
    and bounded. ``epsilon`` is raised to 0.1: with a near-zero epsilon the
    diagonal normalization turns small prototype entries into very large
    corrections and adaptation collapses on this toy.
    """
    return ExperimentConfig(
        domain=ToyDomainConfig(
            num_classes=4, feature_dim=4, height=16, width=16, num_images=8,
            class_separation=4.0, class_spread=1.0,
            rotation_deg=0.0, translation=(1.5, 1.5, 0.0, 0.0), gain=(1.0,),
            label_noise=0.0, seed=seed,
        ),
        model=ModelConfig(hidden=(8,), embedding="hidden", activation="sigmoid"),
        schedule=Schedule(steps=200, lr=0.5),
        spr=SPRParams(epsilon=0.1),
        self_training=SelfTrainSchedule(),
    )


_SECTIONS = {
    "domain": ("domain", ToyDomainConfig),
    "shift": ("domain", ToyDomainConfig),
    "model": ("model", ModelConfig),
    "schedule": ("schedule", Schedule),
    "spr": ("spr", SPRParams),
    "self_training": ("self_training", SelfTrainSchedule),
}

_SHIFT_KEYS = {"rotation_deg", "translation", "gain", "label_noise"}
_TUPLE_KEYS = {"priors", "translation", "gain", "hidden"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ContractError(f"not a boolean: {text!r}")


def _coerce(name: str, default, text: str):
    text = text.strip()
    if name in _TUPLE_KEYS:
        if text.lower() in ("", "none"):
            return None if name == "priors" else ()
        conv = int if name == "hidden" else float
        return tuple(conv(tok) for tok in text.split(","))
    if name == "momentum":
        return None if text.lower() == "none" else float(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    cfg = base or ExperimentConfig()
    parts = {"domain": cfg.domain, "model": cfg.model, "schedule": cfg.schedule,
             "spr": cfg.spr, "self_training": cfg.self_training}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ContractError(f"unknown config section [{section}]")
        attr, cls = _SECTIONS[section]
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for key, value in parser.items(section):
            if key not in known:
                raise ContractError(f"unknown key {key!r} in [{section}]")
            if section == "domain" and key in _SHIFT_KEYS:
                raise ContractError(f"{key!r} belongs in [shift]")
            if section == "shift" and key not in _SHIFT_KEYS:
                raise ContractError(f"{key!r} does not belong in [shift]")
            try:
                updates[key] = _coerce(key, getattr(parts[attr], key), value)
            except ValueError as exc:
                raise ContractError(f"[{section}] {key}: {exc}") from None
        parts[attr] = replace(parts[attr], **updates)
    return ExperimentConfig(**parts).validate()


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value) if value else ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, (attr, cls) in _SECTIONS.items():
        part = getattr(cfg, attr)
        lines.append(f"[{section}]")
        for f in fields(cls):
            in_shift = f.name in _SHIFT_KEYS
            if attr == "domain" and in_shift != (section == "shift"):
                continue
            lines.append(f"{f.name} = {_fmt(getattr(part, f.name))}")
        lines.append("")
    return "\n".join(lines)
