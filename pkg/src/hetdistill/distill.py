"""Distillation losses and the student training loop.

Two transfer modes are supported:

* ``vanilla`` — softened cross-entropy between teacher and student output
  distributions at a shared temperature; the whole student (extractor and
  its own head) is trained.
* ``fixed_linear`` — the student inherits the teacher's linear head, which
  stays frozen, and its extractor (plus a projection when the latent widths
  differ) is trained to reproduce the teacher's latent vectors in squared
  error.  Student logits are ``head_w @ (P z_s) + head_b``.

Training draws batches with replacement from a selection plan, monitors the
distillation loss on a held-out slice of the collection, multiplies the
learning rate by a fixed factor after a patience of non-improving
pseudo-epochs, and returns the best-by-validation parameters.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datagen import SampleSet
from .errors import InvalidArgumentError
from .models import Gradients, NetworkParams, ForwardRecord, backward, extractor_forward
from .numerics import Prng, cumulative_from_probabilities
from .sampler import SamplingPlan, SelectionMetrics, metrics_from_counts
from .scores import TeacherCache, build_cache

MODE_FIXED_LINEAR = "fixed_linear"
MODE_VANILLA = "vanilla"


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def kd_loss_batch(teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float):
    """Mean softened cross-entropy and its gradient w.r.t. the student logits."""
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    if t.shape != s.shape:
        raise InvalidArgumentError(f"logit shapes differ: {t.shape} vs {s.shape}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise InvalidArgumentError("logits contain non-finite entries")
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    n = t.shape[0]
    p_t = kernels.softmax_rows(np.ascontiguousarray(t / temperature))
    p_s = kernels.softmax_rows(np.ascontiguousarray(s / temperature))
    loss = float(-(p_t * np.log(np.maximum(p_s, 1e-300))).sum() / n)
    grad = (p_s - p_t) / (temperature * n)
    return loss, grad


def vanilla_kd_loss(teacher_logits, student_logits, temperature: float = 2.0):
    """Per-sample softened cross-entropy; gradient is (p_s - p_t) / temperature."""
    loss, grad = kd_loss_batch(teacher_logits, student_logits, temperature)
    return loss, grad[0]


def latent_loss_batch(student_latent: np.ndarray, teacher_latent: np.ndarray, projection: np.ndarray | None):
    """Mean squared latent mismatch and gradients w.r.t. student latents and P.

    Returns (loss, grad_latent, grad_projection); the projection gradient is
    None when P is absent (equal latent widths).
    """
    z_s = np.atleast_2d(np.asarray(student_latent, dtype=np.float64))
    z_t = np.atleast_2d(np.asarray(teacher_latent, dtype=np.float64))
    n = z_s.shape[0]
    if projection is None:
        if z_s.shape != z_t.shape:
            raise InvalidArgumentError(
                f"latent shapes differ ({z_s.shape} vs {z_t.shape}) and no projection was given"
            )
        residual = z_s - z_t
        loss = float((residual**2).sum() / n)
        return loss, 2.0 * residual / n, None
    p_t, p_s = projection.shape
    if z_s.shape[1] != p_s or z_t.shape[1] != p_t:
        raise InvalidArgumentError(
            f"projection {projection.shape} incompatible with latents {z_s.shape}, {z_t.shape}"
        )
    residual = z_s @ projection.T - z_t          # (n, p_t)
    loss = float((residual**2).sum() / n)
    grad_r = 2.0 * residual / n
    grad_latent = grad_r @ projection            # (n, p_s)
    grad_projection = grad_r.T @ z_s             # (p_t, p_s)
    return loss, grad_latent, grad_projection


def fixed_linear_loss(student_latent, teacher_latent, projection: np.ndarray | None = None):
    """Per-sample squared-error latent matching.

    loss = ||P z_s - z_t||^2 with gradients 2 P^T r w.r.t. z_s and
    2 r z_s^T w.r.t. P (r the residual); P omitted means identity.
    """
    loss, grad_latent, grad_projection = latent_loss_batch(student_latent, teacher_latent, projection)
    return loss, grad_latent[0], grad_projection


# ---------------------------------------------------------------------------
# student model
# ---------------------------------------------------------------------------

@dataclass
class StudentModel:
    """Trainable extractor with either a frozen inherited head or its own.

    ``projection`` maps the student latent into the teacher latent space and
    exists only in fixed-linear mode with unequal latent widths; equal widths
    use the identity implicitly.  ``head_w`` is (K, p_t) when a projection is
    present, (K, p_s) otherwise.
    """

    widths: tuple[int, ...]
    class_count: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    projection: np.ndarray | None
    head_w: np.ndarray
    head_b: np.ndarray
    mode: str

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    def copy(self) -> "StudentModel":
        return copy.deepcopy(self)

    def effective_head(self) -> tuple[np.ndarray, np.ndarray]:
        """The (K, p_s) head producing this student's logits directly."""
        if self.projection is None:
            return self.head_w, self.head_b
        return self.head_w @ self.projection, self.head_b


def student_forward(model: StudentModel, x: np.ndarray) -> ForwardRecord:
    """Forward pass through extractor, projection, and head."""
    batch = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if batch.shape[1] != model.input_dim:
        raise InvalidArgumentError(f"input dim {batch.shape[1]} != student input dim {model.input_dim}")
    inputs, pres, latent = extractor_forward(model.weights, model.biases, batch)
    mapped = latent if model.projection is None else latent @ model.projection.T
    logits = kernels.affine(np.ascontiguousarray(mapped), model.head_w, model.head_b)
    return ForwardRecord(inputs, pres, latent, logits)


def student_logits(model: StudentModel, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    out = np.empty((features.shape[0], model.class_count))
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start : start + batch_size]
        out[start : start + chunk.shape[0]] = student_forward(model, chunk).logits
    return out


def init_student(teacher: NetworkParams, widths, mode: str, rng: Prng) -> StudentModel:
    """Fresh student for the given teacher.

    Extractor weights use variance 2/fan_in.  In fixed-linear mode the
    teacher head is copied (and frozen by the trainer); a projection with
    entry variance 1/p_s is added when the latent widths differ.  In vanilla
    mode the student gets its own head.
    """
    if mode not in (MODE_FIXED_LINEAR, MODE_VANILLA):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    widths = tuple(int(w) for w in widths)
    if widths[0] != teacher.input_dim:
        raise InvalidArgumentError(
            f"student input dim {widths[0]} != teacher input dim {teacher.input_dim}"
        )
    gen = rng.gen
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(gen.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    p_s = widths[-1]
    if mode == MODE_FIXED_LINEAR:
        projection = None
        if p_s != teacher.latent_dim:
            projection = gen.standard_normal((teacher.latent_dim, p_s)) * np.sqrt(1.0 / p_s)
        head_w = teacher.head_w.copy()
        head_b = teacher.head_b.copy()
    else:
        projection = None
        head_w = gen.standard_normal((teacher.class_count, p_s)) * np.sqrt(2.0 / p_s)
        head_b = np.zeros(teacher.class_count)
    return StudentModel(widths, teacher.class_count, weights, biases, projection, head_w, head_b, mode)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model, data: SampleSet) -> float:
    """Argmax accuracy of a teacher or student on labeled data, in percent."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot evaluate on empty data")
    if not data.labeled:
        raise InvalidArgumentError("evaluation needs labels on every sample")
    if isinstance(model, StudentModel):
        logits = student_logits(model, data.features)
    elif isinstance(model, NetworkParams):
        from .models import predict_logits

        logits = predict_logits(model, data.features)
    else:
        raise InvalidArgumentError(f"cannot evaluate object of type {type(model).__name__}")
    return float((logits.argmax(axis=1) == data.labels).mean() * 100.0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistillConfig:
    student_widths: tuple[int, ...]
    total_pseudo_epochs: int = 80
    pseudo_epoch_size: int = 500
    batch_size: int = 32
    temperature: float = 2.0
    learning_rate: float = 0.01
    lr_decay_factor: float = 0.4
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.total_pseudo_epochs < 0 or self.pseudo_epoch_size < 1 or self.batch_size < 1:
            raise InvalidArgumentError("pseudo-epoch sizes and batch size must be positive")
        if not self.temperature > 0 or not self.learning_rate > 0:
            raise InvalidArgumentError("temperature and learning rate must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise InvalidArgumentError(f"lr_decay_factor must lie in (0,1), got {self.lr_decay_factor}")
        if self.patience < 1:
            raise InvalidArgumentError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidArgumentError("val_fraction must lie in (0,1)")


@dataclass
class RunReport:
    """Per-pseudo-epoch curves plus the end-of-run summary."""

    val_losses: np.ndarray
    test_accuracies: np.ndarray
    learning_rates: np.ndarray
    final_accuracy: float
    best_accuracy: float
    best_pseudo_epoch: int
    selection: SelectionMetrics | None
    config: DistillConfig
    mode: str


def _update_student(model: StudentModel, grads: Gradients, grad_projection, lr: float, update_head: bool):
    for w, gw in zip(model.weights, grads.weights):
        w -= lr * gw
    for b, gb in zip(model.biases, grads.biases):
        b -= lr * gb
    if grad_projection is not None:
        model.projection -= lr * grad_projection
    if update_head and grads.head_w is not None:
        model.head_w -= lr * grads.head_w
        model.head_b -= lr * grads.head_b


def _mean_loss(model: StudentModel, features, t_logits, t_latents, mode, temperature, batch_size=4096) -> float:
    total, n = 0.0, features.shape[0]
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        record = student_forward(model, features[sl])
        if mode == MODE_FIXED_LINEAR:
            loss, _, _ = latent_loss_batch(record.latent, t_latents[sl], model.projection)
        else:
            loss, _ = kd_loss_batch(t_logits[sl], record.logits, temperature)
        total += loss * (sl.stop - sl.start)
    return total / n


def distill_student(
    teacher: NetworkParams,
    collection: SampleSet,
    plan: SamplingPlan,
    config: DistillConfig,
    mode: str = MODE_FIXED_LINEAR,
    test_set: SampleSet | None = None,
    cache: TeacherCache | None = None,
    student_init: StudentModel | None = None,
) -> tuple[StudentModel, RunReport]:
    """Train a student against the teacher over plan-biased collection draws.

    A fixed fraction of the collection is held out; its distillation loss is
    monitored per pseudo-epoch and drives the plateau schedule.  Returns the
    best-by-validation student together with the full run curves.
    """
    if mode not in (MODE_FIXED_LINEAR, MODE_VANILLA):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    n = len(collection)
    if n < 2:
        raise InvalidArgumentError("collection must hold at least 2 samples")
    if plan.size != n:
        raise InvalidArgumentError(f"plan size {plan.size} != collection size {n}")
    if collection.feature_dim != teacher.input_dim:
        raise InvalidArgumentError("collection feature dim != teacher input dim")

    rng = Prng(config.seed)
    if cache is None:
        cache = build_cache(teacher, collection.features)
    if len(cache) != n:
        raise InvalidArgumentError(f"cache size {len(cache)} != collection size {n}")

    perm = rng.derive("val-split").gen.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n)))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    q_train = plan.q[train_idx]
    mass = q_train.sum()
    if mass <= 0:
        raise InvalidArgumentError("selection plan puts no mass on the training split")
    cdf = cumulative_from_probabilities(q_train / mass)

    student = student_init.copy() if student_init is not None else init_student(
        teacher, config.student_widths, mode, rng.derive("student-init")
    )
    if student.mode != mode:
        raise InvalidArgumentError(f"student_init mode {student.mode!r} != requested mode {mode!r}")

    draw_gen = rng.derive("sampler").gen
    draw_counts = np.zeros(n, dtype=np.int64)
    update_head = mode == MODE_VANILLA

    val_features = collection.features[val_idx]
    val_logits = cache.logits[val_idx]
    val_latents = cache.latents[val_idx]

    epochs = config.total_pseudo_epochs
    val_losses = np.empty(epochs)
    test_accs = np.full(epochs, np.nan)
    lrs = np.empty(epochs)
    lr = config.learning_rate
    best_val = math.inf
    best_epoch = -1
    best_student = student.copy()
    bad_epochs = 0

    for epoch in range(epochs):
        local = kernels.draw_indices(cdf, draw_gen.random(config.pseudo_epoch_size))
        chosen = train_idx[local]
        np.add.at(draw_counts, chosen, 1)
        for start in range(0, config.pseudo_epoch_size, config.batch_size):
            idx = chosen[start : start + config.batch_size]
            x = collection.features[idx]
            record = student_forward(student, x)
            if mode == MODE_FIXED_LINEAR:
                _, grad_latent, grad_projection = latent_loss_batch(
                    record.latent, cache.latents[idx], student.projection
                )
                grads = backward(student, record, latent_grad=grad_latent)
            else:
                _, grad_logits = kd_loss_batch(cache.logits[idx], record.logits, config.temperature)
                grad_projection = None
                grads = backward(student, record, logit_grad=grad_logits)
            _update_student(student, grads, grad_projection, lr, update_head)

        val_losses[epoch] = _mean_loss(
            student, val_features, val_logits, val_latents, mode, config.temperature
        )
        if test_set is not None:
            test_accs[epoch] = evaluate(student, test_set)
        lrs[epoch] = lr

        if val_losses[epoch] < best_val:
            best_val = val_losses[epoch]
            best_epoch = epoch
            best_student = student.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                lr *= config.lr_decay_factor
                bad_epochs = 0

    selection = metrics_from_counts(draw_counts, collection.tags) if draw_counts.sum() > 0 else None
    final_acc = evaluate(best_student, test_set) if test_set is not None else float("nan")
    best_acc = float(np.nanmax(test_accs)) if epochs and test_set is not None else float("nan")
    report = RunReport(
        val_losses=val_losses,
        test_accuracies=test_accs,
        learning_rates=lrs,
        final_accuracy=final_acc,
        best_accuracy=best_acc,
        best_pseudo_epoch=best_epoch,
        selection=selection,
        config=config,
        mode=mode,
    )
    return best_student, report
