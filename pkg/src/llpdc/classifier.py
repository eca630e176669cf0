"""Small softmax classifiers with hand-written gradients.

Two architectures: ``linear`` (logits = xW + b) and ``mlp`` (one ReLU
hidden layer). Parameters are a flat list of arrays, ``[W1, b1]`` or
``[W1, b1, W2, b2]``, so the optimiser and the gradient checker can treat
them uniformly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ClassifierParams",
    "OptimizerState",
    "init_params",
    "softmax",
    "forward",
    "forward_logits",
    "backward",
    "loss_and_grad",
    "cosine_lr",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "llpdc-checkpoint/1"


@dataclass
class ClassifierParams:
    arch: str
    input_dim: int
    n_classes: int
    hidden: int | None
    arrays: list[np.ndarray]

    @property
    def layer_names(self) -> list[str]:
        if self.arch == "linear":
            return ["W1", "b1"]
        return ["W1", "b1", "W2", "b2"]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.arch, self.input_dim, self.n_classes, self.hidden,
            [a.copy() for a in self.arrays],
        )


def init_params(
    arch: str, input_dim: int, n_classes: int, hidden: int = 64, seed: int = 0
) -> ClassifierParams:
    """Fan-in uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    if arch == "linear":
        dims = [(input_dim, n_classes)]
        hidden_width = None
    elif arch == "mlp":
        dims = [(input_dim, hidden), (hidden, n_classes)]
        hidden_width = hidden
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    arrays = []
    for fan_in, fan_out in dims:
        s = 1.0 / math.sqrt(fan_in)
        arrays.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        arrays.append(np.zeros(fan_out))
    return ClassifierParams(arch, input_dim, n_classes, hidden_width, arrays)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(params: ClassifierParams, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs of dimension {params.input_dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X


def forward_logits(params: ClassifierParams, X: np.ndarray):
    """Logits for a batch plus the cache :func:`backward` needs."""
    X = _as_batch(params, X)
    if params.arch == "linear":
        W1, b1 = params.arrays
        logits = _finite(X @ W1 + b1, "W1/b1")
        return logits, (X,)
    W1, b1, W2, b2 = params.arrays
    pre = _finite(X @ W1 + b1, "W1/b1")
    h = np.maximum(pre, 0.0)
    return _finite(h @ W2 + b2, "W2/b2"), (X, pre, h)


def _finite(a: np.ndarray, layer: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite activations in layer {layer}")
    return a


def forward(params: ClassifierParams, x) -> np.ndarray:
    """Class probabilities; a single vector in gives a single vector out."""
    single = np.ndim(x) == 1
    probs = softmax(forward_logits(params, x)[0])
    return probs[0] if single else probs


def backward(params: ClassifierParams, cache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients of the parameters given d(loss)/d(logits)."""
    if params.arch == "linear":
        (X,) = cache
        grads = [X.T @ dlogits, dlogits.sum(axis=0)]
    else:
        X, pre, h = cache
        W2 = params.arrays[2]
        dh = (dlogits @ W2.T) * (pre > 0)
        grads = [X.T @ dh, dh.sum(axis=0), h.T @ dlogits, dlogits.sum(axis=0)]
    for name, g in zip(params.layer_names, grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in layer {name}")
    return grads


def loss_and_grad(params: ClassifierParams, X, targets):
    """Mean cross-entropy over a batch and its gradient.

    ``targets`` is either a vector of class indices or a matrix whose rows
    are target distributions.
    """
    logits, cache = forward_logits(params, X)
    n = logits.shape[0]
    probs = softmax(logits)
    t = np.asarray(targets)
    if t.ndim == 1:
        if not np.issubdtype(t.dtype, np.integer):
            raise ValueError("hard targets must be integer class indices")
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), t] = 1.0
        t = onehot
    elif t.shape != probs.shape:
        raise ValueError(f"target shape {t.shape} does not match predictions {probs.shape}")
    loss = float(-(t * np.log(np.maximum(probs, PROB_FLOOR))).sum() / n)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss in layer output")
    # d/dz of -sum_c t_c log softmax(z)_c is p * sum(t) - t
    dlogits = (probs * t.sum(axis=1, keepdims=True) - t) / n
    return loss, backward(params, cache, dlogits)


@dataclass
class OptimizerState:
    base_lr: float
    total_steps: int
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    buffers: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.base_lr <= 0 or self.total_steps <= 0 or self.weight_decay < 0:
            raise ValueError("invalid optimiser settings")


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """``base_lr * cos(7*pi*step / (16*total_steps))``; ends near 0.195*base_lr."""
    return base_lr * math.cos(7.0 * math.pi * step / (16.0 * total_steps))


def sgd_step(params: ClassifierParams, grads, state: OptimizerState):
    """One momentum SGD update, in place.

    ``buf = mu*buf + grad + wd*param``; ``param -= lr(k)*buf``; ``k += 1``.
    """
    if state.step >= state.total_steps:
        raise ValueError(f"optimizer already at final step {state.total_steps}")
    if len(grads) != len(params.arrays):
        raise ValueError("gradient list does not match parameters")
    if not state.buffers:
        state.buffers = [np.zeros_like(p) for p in params.arrays]
    lr = cosine_lr(state.base_lr, state.step, state.total_steps)
    for p, g, buf in zip(params.arrays, grads, state.buffers):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        buf *= state.momentum
        buf += g
        if state.weight_decay:
            buf += state.weight_decay * p
        p -= lr * buf
    state.step += 1
    return params, state


def save_checkpoint(params: ClassifierParams, path, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": params.arch,
        "input_dim": params.input_dim,
        "n_classes": params.n_classes,
        "hidden": params.hidden,
        "arrays": {
            name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in zip(params.layer_names, params.arrays)
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ClassifierParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    params = ClassifierParams(doc["arch"], doc["input_dim"], doc["n_classes"], doc["hidden"], [])
    params.arrays = [
        np.asarray(doc["arrays"][name]["data"], dtype=np.float64).reshape(doc["arrays"][name]["shape"])
        for name in params.layer_names
    ]
    return params
