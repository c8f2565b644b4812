"""Score-driven selection distributions over a collection.

A plan turns per-sample scores into selection probabilities
``q = softmax(lambda * score)`` where ``lambda`` is calibrated from a single
interpretable knob: the inter-quartile probability ratio (IQPR), the factor
by which the third-quartile-scored sample is more likely to be drawn than
the first-quartile one.  IQPR = 1 is exactly uniform; large values
concentrate on the top-scored samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, InvalidStateError
from .numerics import Prng, cumulative_from_probabilities, quantile
from .scores import ScoreVector

logger = logging.getLogger(__name__)

_EXP_CLAMP = 700.0


@dataclass
class SelectionMetrics:
    """Summary of which samples a finished draw sequence actually touched."""

    skip_ratio: float                       # % of samples never selected
    uniformity: float                       # normalized entropy over selected, in [0, 1]
    irrelevant_proportion: float | None     # % of selected samples tagged irrel

    def as_dict(self) -> dict:
        out = {"skip_ratio": self.skip_ratio, "uniformity": self.uniformity}
        if self.irrelevant_proportion is not None:
            out["irrelevant_proportion"] = self.irrelevant_proportion
        return out


@dataclass
class SamplingPlan:
    """Selection distribution plus draw bookkeeping for one collection."""

    scores: ScoreVector
    iqpr: float
    lam: float
    q: np.ndarray
    draw_counts: np.ndarray
    uniform_fallback: bool = False
    _cdf: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.q.shape[0]

    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            self._cdf = cumulative_from_probabilities(self.q)
        return self._cdf


def calibrate_lambda(scores, iqpr: float) -> float:
    """Inverse temperature matching the requested inter-quartile ratio.

    ``lambda = ln(iqpr) / (Q3 - Q1)`` over the score distribution.  Equal
    quartiles (constant-ish scores) fall back to 0, i.e. uniform sampling,
    with a logged warning rather than an error.
    """
    values = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if values.shape[0] < 2:
        raise InvalidArgumentError("calibration needs at least 2 scores")
    if not iqpr >= 1.0:
        raise InvalidArgumentError(f"iqpr must be >= 1, got {iqpr}")
    q1 = quantile(values, 0.25)
    q3 = quantile(values, 0.75)
    if q3 == q1:
        if iqpr > 1.0:
            logger.warning(
                "degenerate score quartiles (Q1 == Q3 == %.6g); falling back to uniform sampling", q1
            )
        return 0.0
    return float(np.log(iqpr) / (q3 - q1))


def build_plan(scores: ScoreVector, iqpr: float) -> SamplingPlan:
    """Softmax selection probabilities at the IQPR-calibrated temperature."""
    lam = calibrate_lambda(scores, iqpr)
    fallback = lam == 0.0 and iqpr > 1.0
    scaled = lam * scores.values
    clipped = np.clip(scaled, -_EXP_CLAMP, _EXP_CLAMP)
    n_saturated = int((clipped != scaled).sum())
    if n_saturated:
        logger.warning("%d of %d scaled scores saturated at +/-%.0f", n_saturated, scaled.size, _EXP_CLAMP)
    q = kernels.softmax_rows(np.ascontiguousarray(clipped[None, :]))[0]
    return SamplingPlan(
        scores=scores,
        iqpr=float(iqpr),
        lam=lam,
        q=q,
        draw_counts=np.zeros(scores.values.shape[0], dtype=np.int64),
        uniform_fallback=fallback,
    )


def draw_batches(plan: SamplingPlan, batch_size: int, n_batches: int, rng: Prng) -> np.ndarray:
    """With-replacement index batches of shape (n_batches, batch_size).

    Deterministic given the generator; increments ``plan.draw_counts``.
    """
    if batch_size < 1 or n_batches < 1:
        raise InvalidArgumentError("batch_size and n_batches must be >= 1")
    uniforms = rng.gen.random(n_batches * batch_size)
    idx = kernels.draw_indices(plan.cdf(), uniforms)
    np.add.at(plan.draw_counts, idx, 1)
    return idx.reshape(n_batches, batch_size)


def metrics_from_counts(draw_counts: np.ndarray, tags: np.ndarray | None = None) -> SelectionMetrics:
    """Selection metrics from raw per-sample draw counts.

    ``skip_ratio`` is the percentage of samples with zero draws.
    ``uniformity`` is the entropy of the empirical selection distribution
    restricted to selected samples, divided by ``ln(#selected)`` (0 when a
    single sample was selected).  ``irrelevant_proportion`` is the share of
    selected samples tagged irrelevant, or None when the collection carries
    no irrelevant tags.
    """
    counts = np.asarray(draw_counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise InvalidStateError("selection metrics require at least one recorded draw")
    n = counts.shape[0]
    selected = counts > 0
    n_selected = int(selected.sum())
    skip_ratio = 100.0 * (n - n_selected) / n

    if n_selected == 1:
        uniformity = 0.0
    else:
        p = counts[selected] / total
        uniformity = float(-(p * np.log(p)).sum() / np.log(n_selected))

    irrel_prop = None
    if tags is not None:
        tags = np.asarray(tags)
        from .datagen import TAG_IRREL  # local import avoids cycle at module load

        if np.any(tags == TAG_IRREL):
            irrel_prop = 100.0 * float((selected & (tags == TAG_IRREL)).sum()) / n_selected
    return SelectionMetrics(skip_ratio, uniformity, irrel_prop)


def compute_metrics(plan: SamplingPlan, tags: np.ndarray | None = None) -> SelectionMetrics:
    """Selection metrics for a plan whose draws are complete."""
    return metrics_from_counts(plan.draw_counts, tags)
