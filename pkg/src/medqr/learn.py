"""Supervised heads over frozen embeddings: a linear classifier and a
convolutional text classifier with max-over-time pooling, trained with
hand-rolled Adam on cross-entropy, plus a finite-difference gradient checker.

All math is float64 numpy.  Training is single-threaded and reproduces
exactly under a fixed seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .embed import EmbeddingBackend, embed_sequence

DEFAULT_WIDTHS = (2, 3, 4, 5, 6)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise TrainingError("epochs, batch_size, learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError("dropout must be in [0, 1)")


def default_linear_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=10, batch_size=8, learning_rate=2e-5, dropout=0.1, seed=seed)


def default_cnn_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=16, learning_rate=2e-5, dropout=0.0, seed=seed)


class AdamOptimizer:
    """Adam with bias correction: m, v accumulators per parameter tensor."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        for name, grad in grads.items():
            if name not in params:
                raise TrainingError(f"gradient for unknown parameter {name!r}")
            if grad.shape != params[name].shape:
                raise TrainingError(
                    f"{name}: gradient shape {grad.shape} != parameter shape {params[name].shape}"
                )
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"{name}: non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            param = params[name]
            m = self._m.setdefault(name, np.zeros_like(param))
            v = self._v.setdefault(name, np.zeros_like(param))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: AdamOptimizer, params: dict, grads: dict) -> dict:
    """Single optimizer step; mutates and returns `params`."""
    state.step(params, grads)
    return params


def cross_entropy(logits, label: int) -> tuple:
    """Stable −log softmax(logits)[label] and its gradient wrt the logits."""
    z = np.asarray(logits, dtype=float)
    if not 0 <= label < z.shape[0]:
        raise TrainingError(f"label {label} out of range for {z.shape[0]} classes")
    zmax = z.max()
    logsumexp = zmax + math.log(np.exp(z - zmax).sum())
    loss = logsumexp - z[label]
    grad = np.exp(z - logsumexp)
    grad[label] -= 1.0
    return float(loss), grad


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearHead:
    """Linear classifier over a pooled representation."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise TrainingError("weight must be (classes, dim), bias (classes,)")

    @classmethod
    def create(cls, dim: int, classes: int, seed: int = 0) -> "LinearHead":
        rng = np.random.default_rng(seed)
        return cls(_uniform_init(rng, (classes, dim), dim), np.zeros(classes))

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def classes(self) -> int:
        return self.weight.shape[0]

    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.weight @ x + self.bias

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward(x)))


def linear_loss_and_grads(head: LinearHead, x: np.ndarray, label: int) -> tuple:
    loss, dlogits = cross_entropy(head.forward(x), label)
    return loss, {"weight": np.outer(dlogits, x), "bias": dlogits}


def _batch_ce(logits: np.ndarray, labels: np.ndarray) -> tuple:
    """Mean cross-entropy over a batch and d(loss)/d(logits)."""
    zmax = logits.max(axis=1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
    rows = np.arange(logits.shape[0])
    losses = logsumexp[:, 0] - logits[rows, labels]
    probs = np.exp(logits - logsumexp)
    dlogits = probs
    dlogits[rows, labels] -= 1.0
    dlogits /= logits.shape[0]
    return float(losses.mean()), dlogits


def train_linear(head: LinearHead, dataset: Sequence, config: TrainConfig) -> tuple:
    """Mini-batch Adam with inverted dropout on the inputs (training only).

    Returns (head, per-epoch mean loss log); the head is updated in place.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    X = np.stack([np.asarray(x, dtype=float) for x, _ in dataset])
    y = np.array([label for _, label in dataset], dtype=int)
    if X.shape[1] != head.dim:
        raise TrainingError(f"input dim {X.shape[1]} != head dim {head.dim}")
    if y.min() < 0 or y.max() >= head.classes:
        raise TrainingError("label out of range")
    rng = np.random.default_rng(config.seed)
    opt = AdamOptimizer(config.learning_rate)
    params = head.params()
    losses = []
    n = len(dataset)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = X[idx]
            if config.dropout > 0.0:
                keep = rng.random(xb.shape) >= config.dropout
                xb = xb * keep / (1.0 - config.dropout)
            logits = xb @ head.weight.T + head.bias
            loss, dlogits = _batch_ce(logits, y[idx])
            grads = {"weight": dlogits.T @ xb, "bias": dlogits.sum(axis=0)}
            opt.step(params, grads)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    return head, losses


class CnnHead:
    """Per-width filter banks, ReLU, max-over-time, then a linear output layer.

    Sequences shorter than the widest filter are zero-padded on the right.
    """

    def __init__(self, filters: dict, biases: dict, out_weight: np.ndarray, out_bias: np.ndarray):
        self.widths = tuple(sorted(filters))
        self.filters = {w: np.asarray(filters[w], dtype=float) for w in self.widths}
        self.biases = {w: np.asarray(biases[w], dtype=float) for w in self.widths}
        self.out_weight = np.asarray(out_weight, dtype=float)
        self.out_bias = np.asarray(out_bias, dtype=float)
        first = self.filters[self.widths[0]]
        self.n_filters = first.shape[0]
        self.dim = first.shape[2]
        feature_size = self.n_filters * len(self.widths)
        if self.out_weight.shape[1] != feature_size:
            raise TrainingError(
                f"output layer expects {self.out_weight.shape[1]} features, heads produce {feature_size}"
            )

    @classmethod
    def create(
        cls,
        dim: int,
        classes: int,
        seed: int = 0,
        n_filters: int = 100,
        widths: tuple = DEFAULT_WIDTHS,
    ) -> "CnnHead":
        rng = np.random.default_rng(seed)
        filters = {}
        biases = {}
        for w in widths:
            filters[w] = _uniform_init(rng, (n_filters, w, dim), w * dim)
            biases[w] = np.zeros(n_filters)
        feature_size = n_filters * len(widths)
        out_weight = _uniform_init(rng, (classes, feature_size), feature_size)
        return cls(filters, biases, out_weight, np.zeros(classes))

    @property
    def classes(self) -> int:
        return self.out_weight.shape[0]

    def params(self) -> dict:
        out = {}
        for w in self.widths:
            out[f"filters_{w}"] = self.filters[w]
            out[f"bias_{w}"] = self.biases[w]
        out["out_weight"] = self.out_weight
        out["out_bias"] = self.out_bias
        return out

    def _pad(self, vectors: np.ndarray) -> np.ndarray:
        need = max(self.widths)
        if vectors.shape[0] >= need:
            return vectors
        pad = np.zeros((need - vectors.shape[0], vectors.shape[1]))
        return np.vstack([vectors, pad])

    def _forward(self, vectors: np.ndarray) -> tuple:
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise TrainingError(f"expected (T, {self.dim}) vectors, got {vectors.shape}")
        if vectors.shape[0] < 1:
            raise TrainingError("sequence must contain at least one token")
        x = self._pad(np.asarray(vectors, dtype=float))
        feats = []
        caches = []
        for w in self.widths:
            windows = np.lib.stride_tricks.sliding_window_view(x, (w, self.dim))[:, 0]
            conv = np.einsum("nwd,kwd->nk", windows, self.filters[w]) + self.biases[w]
            relu = np.maximum(conv, 0.0)
            arg = np.argmax(relu, axis=0)  # first max wins a tie
            feats.append(relu[arg, np.arange(self.n_filters)])
            caches.append((windows, conv, arg))
        feature = np.concatenate(feats)
        logits = self.out_weight @ feature + self.out_bias
        return logits, feature, caches

    def forward(self, vectors: np.ndarray) -> np.ndarray:
        return self._forward(vectors)[0]

    def predict(self, vectors: np.ndarray) -> int:
        return int(np.argmax(self.forward(vectors)))


def cnn_forward(head: CnnHead, vectors: np.ndarray) -> np.ndarray:
    return head.forward(vectors)


def cnn_loss_and_grads(head: CnnHead, vectors: np.ndarray, label: int) -> tuple:
    logits, feature, caches = head._forward(vectors)
    loss, dlogits = cross_entropy(logits, label)
    grads = {
        "out_weight": np.outer(dlogits, feature),
        "out_bias": dlogits,
    }
    dfeature = head.out_weight.T @ dlogits
    cols = np.arange(head.n_filters)
    for i, w in enumerate(head.widths):
        windows, conv, arg = caches[i]
        dmax = dfeature[i * head.n_filters : (i + 1) * head.n_filters]
        # Max-pool routes the gradient to the argmax window; ReLU gates it.
        gate = (conv[arg, cols] > 0.0).astype(float)
        routed = dmax * gate
        grads[f"filters_{w}"] = windows[arg] * routed[:, None, None]
        grads[f"bias_{w}"] = routed
    return loss, grads


def _sum_grads(total: dict, part: dict) -> None:
    for name, grad in part.items():
        if name in total:
            total[name] += grad
        else:
            total[name] = grad.copy()


def train_cnn(
    head: CnnHead, dataset: Sequence, backend: EmbeddingBackend, config: TrainConfig
) -> tuple:
    """Train over (TokenSequence, label) pairs; embeddings come from `backend`
    once up front and stay frozen."""
    if not dataset:
        raise TrainingError("empty dataset")
    if config.dropout > 0.0:
        raise TrainingError("the convolutional head trains without dropout")
    if backend.dim != head.dim:
        raise TrainingError(f"backend dim {backend.dim} != head dim {head.dim}")
    embedded = [embed_sequence(backend, seq) for seq, _ in dataset]
    labels = [label for _, label in dataset]
    rng = np.random.default_rng(config.seed)
    opt = AdamOptimizer(config.learning_rate)
    params = head.params()
    losses = []
    n = len(dataset)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            total: dict = {}
            batch_loss = 0.0
            for j in idx:
                loss, grads = cnn_loss_and_grads(head, embedded[j], labels[j])
                batch_loss += loss
                _sum_grads(total, grads)
            scale = 1.0 / len(idx)
            for name in total:
                total[name] *= scale
            opt.step(params, total)
            batch_losses.append(batch_loss * scale)
        losses.append(float(np.mean(batch_losses)))
    return head, losses


def grad_check(
    params: dict, analytic: dict, loss_fn: Callable, epsilon: float = 1e-4
) -> float:
    """Central finite differences per scalar parameter; returns the maximum
    relative error |ga − gn| / max(1e-12, |ga| + |gn|)."""
    if epsilon <= 0:
        raise TrainingError("epsilon must be > 0")
    worst = 0.0
    for name, array in params.items():
        flat = array.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            loss_plus = loss_fn()
            flat[i] = original - epsilon
            loss_minus = loss_fn()
            flat[i] = original
            if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
                raise TrainingError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            denom = max(1e-12, abs(ga[i]) + abs(numeric))
            worst = max(worst, abs(ga[i] - numeric) / denom)
    return worst


_HEAD_MAGIC = b"MQHD"


def save_head(head, path, config: dict | None = None, seed: int = 0) -> None:
    """Checkpoint: u32-prefixed JSON header then little-endian f32 blocks in
    header order.  Round-trips bit-exactly."""
    if isinstance(head, LinearHead):
        meta: dict = {"kind": "linear", "dim": head.dim, "classes": head.classes}
    elif isinstance(head, CnnHead):
        meta = {
            "kind": "cnn",
            "dim": head.dim,
            "classes": head.classes,
            "widths": list(head.widths),
            "n_filters": head.n_filters,
        }
    else:
        raise TrainingError(f"cannot checkpoint {type(head).__name__}")
    params = head.params()
    meta["params"] = [[name, list(arr.shape)] for name, arr in params.items()]
    meta["config"] = config or {}
    meta["seed"] = seed
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_HEAD_MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for name, _ in meta["params"]:
            handle.write(params[name].astype("<f4").tobytes())


def load_head(path) -> tuple:
    """Returns (head, header dict)."""
    with open(path, "rb") as handle:
        if handle.read(4) != _HEAD_MAGIC:
            raise TrainingError("bad checkpoint magic")
        (blob_len,) = struct.unpack("<I", handle.read(4))
        meta = json.loads(handle.read(blob_len).decode("utf-8"))
        arrays = {}
        for name, shape in meta["params"]:
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(4 * count)
            if len(raw) != 4 * count:
                raise TrainingError(f"truncated checkpoint while reading {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").astype(float).reshape(shape)
        if handle.read(1):
            raise TrainingError("trailing bytes in checkpoint")
    if meta["kind"] == "linear":
        head: LinearHead | CnnHead = LinearHead(arrays["weight"], arrays["bias"])
    elif meta["kind"] == "cnn":
        widths = meta["widths"]
        head = CnnHead(
            {w: arrays[f"filters_{w}"] for w in widths},
            {w: arrays[f"bias_{w}"] for w in widths},
            arrays["out_weight"],
            arrays["out_bias"],
        )
    else:
        raise TrainingError(f"unknown head kind {meta['kind']!r}")
    return head, meta
