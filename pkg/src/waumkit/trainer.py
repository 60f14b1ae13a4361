"""Small ReLU MLP trained with SGD + momentum on soft targets.

Besides training, :func:`train_with_trace` records the softmax output of
every evaluation task after each epoch; those traces feed the margin
statistics in :mod:`waumkit.identification`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from waumkit.data import DimensionError, ValidationError

_CLIP = 1e-12


class NumericalError(ArithmeticError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    n_class: int
    hidden_sizes: tuple = (30, 20, 20)
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.n_class < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValidationError("all layer sizes must be >= 1")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.n_class]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.lr_decay_factor <= 0:
            raise ValidationError("learning_rate/weight_decay must be >= 0, decay factor > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        n_decays = sum(1 for e in self.lr_decay_epochs if e < epoch)
        return self.learning_rate * self.lr_decay_factor ** n_decays


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def init(cls, spec: MlpSpec) -> "Mlp":
        rng = np.random.default_rng(spec.seed)
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(spec, weights, biases)

    @property
    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if layer < last:
                h = np.maximum(h, 0.0)
        return h

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray):
        """Mean soft cross-entropy over the batch and its parameter gradients."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if layer < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        probs = softmax(acts[-1])
        n = x.shape[0]
        loss = float(-np.sum(targets * np.log(np.maximum(probs, _CLIP))) / n)
        # d loss / d logits for soft targets (targets rows sum to 1)
        delta = (probs * targets.sum(axis=1, keepdims=True) - targets) / n
        g_w, g_b = [None] * len(self.weights), [None] * len(self.weights)
        for layer in range(last, -1, -1):
            g_w[layer] = acts[layer].T @ delta
            g_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0)
        return loss, [g for pair in zip(g_w, g_b) for g in pair]


@dataclass(frozen=True)
class MarginTrace:
    """Softmax outputs recorded after each epoch, shape (T, n_task, K)."""

    softmaxes: np.ndarray

    @property
    def final_softmax(self) -> np.ndarray:
        return self.softmaxes[-1]

    @property
    def shape(self):
        return self.softmaxes.shape

    def save(self, path) -> None:
        T, n, K = self.softmaxes.shape
        payload = {"shape": [T, n, K], "softmaxes": self.softmaxes.reshape(-1).tolist()}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MarginTrace":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        arr = np.asarray(payload["softmaxes"], dtype=np.float64)
        return cls(arr.reshape(payload["shape"]))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: Mlp, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"expected features with {model.spec.input_dim} columns, got shape {features.shape}"
        )
    return softmax(model.logits(features))


def train_with_trace(
    spec: MlpSpec,
    cfg: TrainConfig,
    features,
    targets,
    eval_tasks=None,
    model: Optional[Mlp] = None,
) -> tuple[Mlp, MarginTrace]:
    """Train an MLP on simplex-row ``targets`` and record per-epoch softmaxes.

    ``eval_tasks`` defaults to ``features``. Recording happens after each
    epoch's updates, in a separate full-batch inference pass.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    ev = x if eval_tasks is None else np.asarray(eval_tasks, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"features must have {spec.input_dim} columns, got {x.shape}")
    if y.shape != (x.shape[0], spec.n_class):
        raise DimensionError(f"targets shape {y.shape} != {(x.shape[0], spec.n_class)}")
    if ev.ndim != 2 or ev.shape[1] != spec.input_dim:
        raise DimensionError(f"eval tasks must have {spec.input_dim} columns, got {ev.shape}")
    if (y < 0).any() or not np.allclose(y.sum(axis=1), 1.0, atol=1e-6):
        raise ValidationError("targets must lie on the probability simplex")

    net = Mlp.init(spec) if model is None else model.copy()
    params = net.params
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = x.shape[0]
    trace = np.empty((cfg.epochs, ev.shape[0], spec.n_class))

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = net.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batch}")
            for p, g, v in zip(params, grads, velocity):
                g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v += g
                p -= lr * v
        trace[epoch - 1] = predict_proba(net, ev)
    return net, MarginTrace(trace)


def margin(softmax_row: Sequence[float], assigned_class: int) -> float:
    """sigma_y minus the second-largest entry of the whole vector."""
    s = np.asarray(softmax_row, dtype=np.float64)
    second = np.partition(s, -2)[-2] if s.size > 1 else 0.0
    return float(s[int(assigned_class)] - second)


def margins(softmaxes: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized :func:`margin` over the leading axes.

    ``softmaxes`` has shape (..., n, K) and ``labels`` shape (n,).
    """
    s = np.asarray(softmaxes, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    second = np.partition(s, -2, axis=-1)[..., -2] if s.shape[-1] > 1 else np.zeros(s.shape[:-1])
    picked = np.take_along_axis(s, labels.reshape((1,) * (s.ndim - 2) + (-1, 1)), axis=-1)[..., 0]
    return picked - second


def load_targets(path) -> np.ndarray:
    """Read a labels JSON file (array of K-vectors) as a target matrix."""
    return np.asarray(json.loads(Path(path).read_text(encoding="utf-8")), dtype=np.float64)
