"""Per-pixel MLP classifier with 0-2 smooth hidden layers and manual backprop.

Parameter layout: ``weights[i]`` has shape ``(fan_in, fan_out)`` and
``biases[i]`` shape ``(fan_out,)``; layer ``i`` maps activations of layer
``i - 1`` (the raw D-dim features for ``i = 0``) forward. The last layer
emits C logits. Serialised as ``w{i}.sprt`` / ``b{i}.sprt`` plus a
``layout.txt`` naming the hidden activation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractError, ShapeError
from .. import io


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# name -> (activation, derivative expressed through the activation output a and input z)
ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, z: 1.0 - a ** 2),
    "sigmoid": (_sigmoid, lambda a, z: a * (1.0 - a)),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda a, z: _sigmoid(z)),
}


@dataclass
class ClassifierParams:
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not 1 <= len(self.weights) <= 3:
            raise ShapeError("need 1 to 3 layers with matching weights and biases")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i} expects {w.shape[0]} inputs")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_hidden(self) -> int:
        return len(self.weights) - 1

    def embed_dim(self, embedding: str) -> int:
        if embedding == "logits":
            return self.num_classes
        return self.weights[-1].shape[0]

    def arrays(self) -> list:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> ClassifierParams:
        return ClassifierParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                                self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> ClassifierParams:
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[pos:pos + a.size], dtype=a.dtype).reshape(a.shape))
            pos += a.size
        return ClassifierParams(out[0::2], out[1::2], self.activation)

    def axpy(self, alpha: float, other: ClassifierParams) -> ClassifierParams:
        """``self + alpha * other``."""
        return ClassifierParams([w + alpha * g for w, g in zip(self.weights, other.weights)],
                                [b + alpha * g for b, g in zip(self.biases, other.biases)],
                                self.activation)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def save(self, directory) -> None:
        directory = Path(directory)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            io.write_tensor(directory / f"w{i}.sprt", w)
            io.write_tensor(directory / f"b{i}.sprt", b)
        io.atomic_write_text(directory / "layout.txt",
                             f"layers: {len(self.weights)}\nactivation: {self.activation}\n")

    @classmethod
    def load(cls, directory) -> ClassifierParams:
        directory = Path(directory)
        weights, biases, i = [], [], 0
        while (directory / f"w{i}.sprt").exists():
            weights.append(io.read_tensor(directory / f"w{i}.sprt").astype(np.float64))
            biases.append(io.read_tensor(directory / f"b{i}.sprt").astype(np.float64))
            i += 1
        if not weights:
            raise FileNotFoundError(f"no classifier parameters under {directory}")
        activation = "tanh"
        layout = directory / "layout.txt"
        if layout.exists():
            for line in layout.read_text().splitlines():
                key, _, value = line.partition(":")
                if key.strip() == "activation":
                    activation = value.strip()
        return cls(weights, biases, activation)


def init_params(in_dim: int, num_classes: int, hidden=(), rng=None, scale: float = 1.0,
                activation: str = "tanh") -> ClassifierParams:
    if len(hidden) > 2:
        raise ContractError("at most two hidden layers are supported")
    rng = np.random.default_rng(0) if rng is None else rng
    dims = [in_dim, *hidden, num_classes]
    weights = [rng.normal(0.0, scale / np.sqrt(a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return ClassifierParams(weights, biases, activation)


def zero_params(in_dim: int, num_classes: int, hidden=(), activation: str = "tanh") -> ClassifierParams:
    dims = [in_dim, *hidden, num_classes]
    return ClassifierParams([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                            [np.zeros(b) for b in dims[1:]], activation)


class _Activations(list):
    def __init__(self, items):
        super().__init__(items)
        self.pre = [None]


def forward_cache(params: ClassifierParams, features):
    """Return ``(logits, activations)`` for (..., D) features.

    ``activations[0]`` is the flattened input and ``activations[i]`` the
    i-th hidden layer output, all as (N, width) arrays; ``activations.pre``
    keeps the matching pre-activations for the backward pass.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"features have {x.shape[-1]} channels, model expects {params.in_dim}")
    lead = x.shape[:-1]
    act = ACTIVATIONS[params.activation][0]
    acts = _Activations([x.reshape(-1, x.shape[-1])])
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = acts[-1] @ w + b
        acts.pre.append(z)
        acts.append(act(z))
    logits = acts[-1] @ params.weights[-1] + params.biases[-1]
    return logits.reshape(lead + (params.num_classes,)), acts


def forward(params: ClassifierParams, features) -> np.ndarray:
    return forward_cache(params, features)[0]


def embedding_of(params: ClassifierParams, logits, acts, embedding: str) -> np.ndarray:
    """The representation prototypes live in: the logits or the last hidden layer."""
    if embedding == "logits":
        return logits.reshape(-1, logits.shape[-1])
    if embedding == "hidden":
        if params.num_hidden == 0:
            raise ContractError("hidden embedding needs at least one hidden layer")
        return acts[-1]
    raise ContractError(f"unknown embedding {embedding!r}")


def backward(params: ClassifierParams, acts, g_logits, g_embed=None, embedding: str = "logits") -> ClassifierParams:
    """Gradient of a loss given its gradients at the logits and the embedding."""
    g = np.asarray(g_logits, dtype=np.float64).reshape(acts[0].shape[0], -1)
    if g_embed is not None and embedding == "logits":
        g = g + np.asarray(g_embed).reshape(g.shape)
    dws, dbs = [], []
    n_layers = len(params.weights)
    for i in range(n_layers - 1, -1, -1):
        dws.append(acts[i].T @ g)
        dbs.append(g.sum(axis=0))
        if i == 0:
            break
        g = g @ params.weights[i].T
        if i == n_layers - 1 and g_embed is not None and embedding == "hidden":
            g = g + np.asarray(g_embed).reshape(g.shape)
        g = g * ACTIVATIONS[params.activation][1](acts[i], acts.pre[i])
    return ClassifierParams(dws[::-1], dbs[::-1])
