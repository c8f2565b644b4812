"""Per-sample characterizing scores computed from cached teacher outputs.

Two scores are provided.  ``t1000`` is the maximum softmax output at
temperature 1000 — a monotone transform of the top-logit margin.
``one_c_sum`` aggregates three indicators (t1000, negative predictive
entropy, and the cosine between the latent vector and the head row of the
winning class), each z-scored over the collection so their scales are
comparable, then summed with equal weight.  Higher always means
"more target-like".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .models import NetworkParams, forward

SCORE_T1000 = "t1000"
SCORE_ONE_C_SUM = "one_c_sum"

T1000_TEMPERATURE = 1000.0


@dataclass
class TeacherCache:
    """Teacher logits and latent vectors for every collection sample."""

    logits: np.ndarray   # (N, K) float64
    latents: np.ndarray  # (N, p_t) float64

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.logits.ndim != 2 or self.latents.ndim != 2:
            raise InvalidArgumentError("cache tensors must be 2-D (sample-major)")
        if self.logits.shape[0] != self.latents.shape[0]:
            raise InvalidArgumentError(
                f"logits count {self.logits.shape[0]} != latents count {self.latents.shape[0]}"
            )
        if not (np.all(np.isfinite(self.logits)) and np.all(np.isfinite(self.latents))):
            raise InvalidArgumentError("cache contains non-finite entries")

    def __len__(self) -> int:
        return self.logits.shape[0]

    @property
    def class_count(self) -> int:
        return self.logits.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.latents.shape[1]


@dataclass
class ScoreVector:
    """Named per-sample score values."""

    score_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InvalidArgumentError("score values must be 1-D")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("score values contain non-finite entries")

    def __len__(self) -> int:
        return self.values.shape[0]


def build_cache(teacher: NetworkParams, features: np.ndarray, batch_size: int = 4096) -> TeacherCache:
    """One teacher forward pass per sample, batched for throughput."""
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if features.ndim != 2:
        raise InvalidArgumentError("features must be an (N, D) matrix")
    if features.shape[1] != teacher.input_dim:
        raise InvalidArgumentError(
            f"feature dim {features.shape[1]} != teacher input dim {teacher.input_dim}"
        )
    n = features.shape[0]
    logits = np.empty((n, teacher.class_count))
    latents = np.empty((n, teacher.latent_dim))
    for start in range(0, n, batch_size):
        chunk = features[start : start + batch_size]
        record = forward(teacher, chunk)
        logits[start : start + chunk.shape[0]] = record.logits
        latents[start : start + chunk.shape[0]] = record.latent
    return TeacherCache(logits, latents)


def _t1000_values(logits: np.ndarray) -> np.ndarray:
    probs = kernels.softmax_rows(np.ascontiguousarray(logits / T1000_TEMPERATURE))
    return probs.max(axis=1)


def score_t1000(cache: TeacherCache) -> ScoreVector:
    """Maximum softmax output at temperature 1000; lies in (1/K, 1)."""
    if cache.class_count < 2:
        raise InvalidArgumentError("t1000 needs at least 2 classes")
    return ScoreVector(SCORE_T1000, _t1000_values(cache.logits))


def raw_one_c_sum_components(cache: TeacherCache, head_w: np.ndarray) -> np.ndarray:
    """The (N, 3) raw indicator matrix: t1000, negative entropy, argmax cosine."""
    head_w = np.asarray(head_w, dtype=np.float64)
    if head_w.shape != (cache.class_count, cache.latent_dim):
        raise InvalidArgumentError(
            f"head shape {head_w.shape} incompatible with cache ({cache.class_count}, {cache.latent_dim})"
        )
    t1000 = _t1000_values(cache.logits)

    probs = kernels.softmax_rows(np.ascontiguousarray(cache.logits))
    safe = np.maximum(probs, 1e-300)
    neg_entropy = (probs * np.log(safe)).sum(axis=1)

    top = cache.logits.argmax(axis=1)
    rows = head_w[top]                               # (N, p_t)
    dots = np.einsum("np,np->n", cache.latents, rows)
    norms = np.linalg.norm(cache.latents, axis=1) * np.linalg.norm(rows, axis=1)
    cosine = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)

    return np.stack([t1000, neg_entropy, cosine], axis=1)


def standardized_sum(components: np.ndarray) -> np.ndarray:
    """Sum of per-column z-scores (population std); constant columns add 0."""
    mean = components.mean(axis=0)
    std = components.std(axis=0)
    centered = components - mean
    z = np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)
    return z.sum(axis=1)


def score_one_c_sum(cache: TeacherCache, head_w: np.ndarray) -> ScoreVector:
    """Equal-weight sum of collection-standardized OOD indicators."""
    if len(cache) < 2:
        raise InvalidArgumentError("standardization needs at least 2 samples")
    return ScoreVector(SCORE_ONE_C_SUM, standardized_sum(raw_one_c_sum_components(cache, head_w)))
