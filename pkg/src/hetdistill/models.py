"""Small rectifier MLPs split into a feature extractor and a linear head.

Every network computes ``logits = head_w @ z(x) + head_b`` where the latent
``z`` is the rectified output of the last extractor layer.  Forward passes
keep the per-layer tensors needed for exact reverse-mode gradients; no
autodiff framework is involved, the hot math lives in
:mod:`hetdistill.kernels`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .datagen import SampleSet
from .errors import InvalidArgumentError
from .numerics import Prng


@dataclass
class NetworkParams:
    """Extractor weights/biases plus the linear head.

    ``widths`` chains input -> hidden... -> latent; weight ``i`` has shape
    ``(widths[i+1], widths[i])`` and the head is ``(K, widths[-1])``.
    """

    widths: tuple[int, ...]
    class_count: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise InvalidArgumentError(f"widths must chain >=2 positive sizes, got {self.widths}")
        if self.class_count < 2:
            raise InvalidArgumentError(f"class_count must be >= 2, got {self.class_count}")
        expected = list(zip(self.widths[1:], self.widths[:-1]))
        got = [w.shape for w in self.weights]
        if got != expected:
            raise InvalidArgumentError(f"weight shapes {got} do not chain widths {self.widths}")
        if self.head_w.shape != (self.class_count, self.widths[-1]):
            raise InvalidArgumentError(
                f"head shape {self.head_w.shape} != ({self.class_count}, {self.widths[-1]})"
            )

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)

    def all_arrays(self) -> list[np.ndarray]:
        """Parameters in declaration order (layer W, b pairs, then head W, b)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        out.extend([self.head_w, self.head_b])
        return out


@dataclass
class ForwardRecord:
    """Cached tensors from one batched forward pass."""

    inputs: list[np.ndarray]       # input to each extractor layer; inputs[0] is x
    pre_activations: list[np.ndarray]
    latent: np.ndarray             # (n, p)
    logits: np.ndarray             # (n, K)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_w: np.ndarray | None
    head_b: np.ndarray | None
    input_grad: np.ndarray = field(default=None)


def _as_batch(x: np.ndarray, dim: int, name: str = "x") -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidArgumentError(f"{name} must have feature dimension {dim}, got shape {arr.shape}")
    return np.ascontiguousarray(arr), single


def extractor_forward(
    weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Run a rectifier stack; returns (layer inputs, pre-activations, latent)."""
    h = x
    inputs, pres = [], []
    for w, b in zip(weights, biases):
        inputs.append(h)
        pre = kernels.affine(h, w, b)
        pres.append(pre)
        h = kernels.relu(pre)
    return inputs, pres, h


def forward(params: NetworkParams, x) -> ForwardRecord:
    """Full forward pass; a single vector is promoted to a 1-row batch.

    All record tensors are batched with shape (n, ...).
    """
    batch, _ = _as_batch(x, params.input_dim)
    inputs, pres, latent = extractor_forward(params.weights, params.biases, batch)
    logits = kernels.affine(latent, params.head_w, params.head_b)
    return ForwardRecord(inputs, pres, latent, logits)


def backward(
    params: NetworkParams,
    record: ForwardRecord,
    logit_grad: np.ndarray | None = None,
    latent_grad: np.ndarray | None = None,
) -> Gradients:
    """Exact reverse-mode gradients of the recorded forward pass.

    Exactly one of ``logit_grad`` (shape (n, K)) or ``latent_grad``
    (shape (n, p)) must be given; gradients are summed over the batch.
    """
    if (logit_grad is None) == (latent_grad is None):
        raise InvalidArgumentError("provide exactly one of logit_grad or latent_grad")
    if logit_grad is not None:
        g = np.atleast_2d(np.asarray(logit_grad, dtype=np.float64))
        if g.shape != record.logits.shape:
            raise InvalidArgumentError(f"logit_grad shape {g.shape} != logits shape {record.logits.shape}")
        head_gw, head_gb, g = kernels.affine_backward(record.latent, params.head_w, np.ascontiguousarray(g))
    else:
        g = np.atleast_2d(np.asarray(latent_grad, dtype=np.float64))
        if g.shape != record.latent.shape:
            raise InvalidArgumentError(f"latent_grad shape {g.shape} != latent shape {record.latent.shape}")
        head_gw = head_gb = None
        g = np.ascontiguousarray(g)

    n_layers = len(params.weights)
    weight_grads: list[np.ndarray] = [None] * n_layers
    bias_grads: list[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        g = kernels.relu_backward(g, record.pre_activations[i])
        gw, gb, g = kernels.affine_backward(record.inputs[i], params.weights[i], g)
        weight_grads[i] = gw
        bias_grads[i] = gb
    return Gradients(weight_grads, bias_grads, head_gw, head_gb, g)


def init_params(widths, class_count: int, rng: Prng) -> NetworkParams:
    """He-style initialization: weight variance 2/fan_in, zero biases."""
    widths = tuple(int(w) for w in widths)
    gen = rng.gen
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(gen.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    head_w = gen.standard_normal((class_count, widths[-1])) * np.sqrt(2.0 / widths[-1])
    head_b = np.zeros(class_count)
    return NetworkParams(widths, class_count, weights, biases, head_w, head_b)


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    probs = kernels.softmax_rows(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class SgdState:
    """Plain SGD with optional momentum and weight decay over a NetworkParams."""

    def __init__(self, params: NetworkParams, momentum: float = 0.0, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(a) for a in params.all_arrays()] if momentum > 0 else None

    def step(self, params: NetworkParams, grads: Gradients, lr: float, update_head: bool = True):
        arrays = params.all_arrays()
        grad_list = []
        for gw, gb in zip(grads.weights, grads.biases):
            grad_list.extend([gw, gb])
        if update_head:
            grad_list.extend([grads.head_w, grads.head_b])
        else:
            grad_list.extend([None, None])
        for i, (p, g) in enumerate(zip(arrays, grad_list)):
            if g is None:
                continue
            g_eff = g + self.weight_decay * p if self.weight_decay else g
            if self.velocity is not None:
                self.velocity[i] = self.momentum * self.velocity[i] - lr * g_eff
                p += self.velocity[i]
            else:
                p -= lr * g_eff


@dataclass(frozen=True)
class TeacherConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    widths: tuple[int, ...] = (2, 32, 16)


@dataclass
class TrainResult:
    params: NetworkParams
    val_accuracies: np.ndarray
    best_val_accuracy: float
    best_epoch: int


def predict_logits(params: NetworkParams, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Logits over a sample matrix, computed in chunks."""
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    out = np.empty((features.shape[0], params.class_count))
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start : start + batch_size]
        out[start : start + chunk.shape[0]] = forward(params, chunk).logits
    return out


def accuracy(params: NetworkParams, data: SampleSet) -> float:
    """Fraction of argmax-correct predictions, in percent."""
    logits = predict_logits(params, data.features)
    return float((logits.argmax(axis=1) == data.labels).mean() * 100.0)


def train_teacher(train: SampleSet, val: SampleSet, config: TeacherConfig, rng: Prng) -> TrainResult:
    """Cross-entropy SGD training with best-by-validation-accuracy selection."""
    present = np.unique(train.labels[train.labels >= 0])
    if present.size < 2:
        raise InvalidArgumentError("teacher training needs at least 2 classes present")
    if not train.labeled or not val.labeled:
        raise InvalidArgumentError("teacher training needs fully labeled train and validation sets")

    params = init_params(config.widths, train.class_count, rng.derive("teacher-init"))
    if config.epochs == 0:
        return TrainResult(params, np.array([]), accuracy(params, val), -1)

    opt = SgdState(params, momentum=config.momentum, weight_decay=config.weight_decay)
    shuffler = rng.derive("teacher-shuffle").gen
    n = len(train)
    best_acc, best_epoch, best_params = -1.0, -1, None
    val_curve = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = shuffler.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            record = forward(params, train.features[idx])
            _, logit_grad = cross_entropy_batch(record.logits, train.labels[idx])
            grads = backward(params, record, logit_grad=logit_grad)
            opt.step(params, grads, config.learning_rate)
        val_curve[epoch] = accuracy(params, val)
        if val_curve[epoch] > best_acc:
            best_acc = val_curve[epoch]
            best_epoch = epoch
            best_params = params.copy()
    return TrainResult(best_params, val_curve, best_acc, best_epoch)
