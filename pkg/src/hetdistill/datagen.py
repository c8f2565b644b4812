"""Synthetic labeled tasks and heterogeneous unlabeled collections.

Tasks are isotropic Gaussian mixtures with one component per class, so all
densities are available in closed form.  A collection mixes three sources:

* ``ori``   — the task distribution itself,
* ``rel``   — the task distribution translated by a fixed shift,
* ``irrel`` — a separate mixture living in its own region.

Because every density is analytic, the exact log-odds of a point belonging
to the target distribution (versus the collection) is computable — the
ground truth that per-sample characterizing scores can only approximate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .numerics import Prng

TAG_ORI = 0
TAG_REL = 1
TAG_IRREL = 2
TAG_UNKNOWN = 255
TAG_NAMES = {TAG_ORI: "ori", TAG_REL: "rel", TAG_IRREL: "irrel", TAG_UNKNOWN: "unknown"}

# below this, a float64 density has underflowed past the smallest normal
_LOG_UNDERFLOW = float(np.log(np.finfo(np.float64).tiny))

_EXP_CLAMP = 700.0


@dataclass(frozen=True)
class GaussianMixtureTask:
    """K-class mixture of isotropic Gaussians in D dimensions."""

    means: np.ndarray          # (K, D)
    stds: np.ndarray           # (K,)
    weights: np.ndarray        # (K,), sums to 1

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.atleast_1d(np.asarray(self.stds, dtype=np.float64))
        if stds.size == 1:
            stds = np.full(means.shape[0], stds[0])
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", weights)
        if means.ndim != 2 or means.shape[0] < 2 or means.shape[1] < 1:
            raise InvalidArgumentError(f"means must be (K>=2, D>=1), got {means.shape}")
        if len({tuple(m) for m in means}) != means.shape[0]:
            raise InvalidArgumentError("class means must be pairwise distinct")
        if stds.shape != (means.shape[0],) or np.any(stds <= 0):
            raise InvalidArgumentError("one positive std per class required")
        if weights.shape != (means.shape[0],) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("weights must be a probability vector of length K")

    @property
    def class_count(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def shifted(self, shift: np.ndarray) -> "GaussianMixtureTask":
        """The same mixture translated by ``shift``."""
        return GaussianMixtureTask(self.means + np.asarray(shift, dtype=np.float64), self.stds, self.weights)


@dataclass(frozen=True)
class CollectionSpec:
    """Recipe for an unlabeled collection mixing ori/rel/irrel sources."""

    task: GaussianMixtureTask
    ori_fraction: float
    rel_fraction: float
    irrel_fraction: float
    rel_shift: np.ndarray
    irrel_task: GaussianMixtureTask
    total_size: int

    def __post_init__(self):
        fractions = np.array([self.ori_fraction, self.rel_fraction, self.irrel_fraction], dtype=np.float64)
        if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"source fractions must be nonnegative and sum to 1, got {fractions}")
        if self.total_size < 1:
            raise InvalidArgumentError(f"total_size must be >= 1, got {self.total_size}")
        shift = np.asarray(self.rel_shift, dtype=np.float64)
        object.__setattr__(self, "rel_shift", shift)
        if shift.shape != (self.task.feature_dim,):
            raise InvalidArgumentError(f"rel_shift must have shape ({self.task.feature_dim},), got {shift.shape}")
        if self.irrel_task.feature_dim != self.task.feature_dim:
            raise InvalidArgumentError("irrel_task feature dimension must match the task's")

    @property
    def target_prior(self) -> float:
        """Mass of target-like sources (ori + rel), used as the prior pi."""
        return self.ori_fraction + self.rel_fraction

    def rel_task(self) -> GaussianMixtureTask:
        return self.task.shifted(self.rel_shift)


@dataclass
class SampleSet:
    """Column-oriented batch of tagged samples.

    ``labels`` uses -1 for unlabeled rows; ``tags`` holds the source codes
    ``TAG_ORI``/``TAG_REL``/``TAG_IRREL`` (``TAG_UNKNOWN`` for external data).
    """

    features: np.ndarray                     # (n, D) float64
    labels: np.ndarray = field(default=None)  # (n,) int32, -1 = unlabeled
    tags: np.ndarray = field(default=None)    # (n,) uint8
    class_count: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.features.shape[0]
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int32)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.tags is None:
            self.tags = np.full(n, TAG_UNKNOWN, dtype=np.uint8)
        else:
            self.tags = np.asarray(self.tags, dtype=np.uint8)
        if self.labels.shape != (n,) or self.tags.shape != (n,):
            raise InvalidArgumentError("features, labels and tags must agree on the sample count")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return bool(np.all(self.labels >= 0))

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.features[idx], self.labels[idx], self.tags[idx], self.class_count)

    def tag_counts(self) -> dict[str, int]:
        return {name: int((self.tags == code).sum()) for code, name in TAG_NAMES.items() if np.any(self.tags == code)}


def mixture_log_density(task: GaussianMixtureTask, x: np.ndarray) -> np.ndarray:
    """Log density of the mixture at each row of ``x``; stable via logsumexp."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = task.feature_dim
    # (n, K) squared distances
    diffs = x[:, None, :] - task.means[None, :, :]
    sq = np.einsum("nkd,nkd->nk", diffs, diffs)
    var = task.stds**2
    log_comp = np.log(task.weights) - 0.5 * d * np.log(2.0 * np.pi * var) - sq / (2.0 * var)
    m = log_comp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(log_comp - m).sum(axis=1, keepdims=True)))[:, 0]


def collection_log_density(spec: CollectionSpec, x: np.ndarray) -> np.ndarray:
    """Log density of the induced collection mixture at each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    parts = []
    for frac, component in (
        (spec.ori_fraction, spec.task),
        (spec.rel_fraction, spec.rel_task()),
        (spec.irrel_fraction, spec.irrel_task),
    ):
        if frac > 0:
            parts.append(np.log(frac) + mixture_log_density(component, x))
    stacked = np.stack(parts, axis=0)
    m = stacked.max(axis=0)
    return m + np.log(np.exp(stacked - m).sum(axis=0))


def generate_task_data(task: GaussianMixtureTask, n: int, rng: Prng) -> SampleSet:
    """Draw ``n`` labeled i.i.d. samples; labels are the generating components."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    gen = rng.gen
    labels = gen.choice(task.class_count, size=n, p=task.weights).astype(np.int32)
    noise = gen.standard_normal((n, task.feature_dim))
    features = task.means[labels] + noise * task.stds[labels, None]
    tags = np.full(n, TAG_ORI, dtype=np.uint8)
    return SampleSet(features, labels, tags, task.class_count)


def _component_counts(fractions: np.ndarray, n: int) -> np.ndarray:
    """Split n into integer counts matching fractions to rounding (sums to n)."""
    cum = np.round(np.cumsum(fractions) * n).astype(np.int64)
    return np.diff(np.concatenate([[0], cum]))


def generate_collection(spec: CollectionSpec, rng: Prng) -> SampleSet:
    """Materialize the unlabeled collection the spec describes.

    Source tags are recorded for metric computation only; labels are absent.
    The result is shuffled deterministically so source blocks do not leak
    into positional splits downstream.
    """
    gen = rng.gen
    counts = _component_counts(
        np.array([spec.ori_fraction, spec.rel_fraction, spec.irrel_fraction]), spec.total_size
    )
    blocks = []
    tag_codes = (TAG_ORI, TAG_REL, TAG_IRREL)
    components = (spec.task, spec.rel_task(), spec.irrel_task)
    for count, tag, component in zip(counts, tag_codes, components):
        if count == 0:
            continue
        labels = gen.choice(component.class_count, size=count, p=component.weights)
        noise = gen.standard_normal((count, component.feature_dim))
        features = component.means[labels] + noise * component.stds[labels, None]
        blocks.append((features, np.full(count, tag, dtype=np.uint8)))
    features = np.concatenate([b[0] for b in blocks], axis=0)
    tags = np.concatenate([b[1] for b in blocks], axis=0)
    order = gen.permutation(spec.total_size)
    return SampleSet(features[order], None, tags[order], spec.task.class_count)


def oracle_log_odds(x, task: GaussianMixtureTask, spec: CollectionSpec) -> np.ndarray:
    """Exact log-odds of target membership given the analytic densities.

    Computes ``ln(pi/(1-pi)) + ln rho_target(x) - ln rho_collection(x)`` with
    ``pi`` the configured ori+rel mass.  Raises
    :class:`~hetdistill.errors.DegenerateInputError` where both densities have
    underflowed.  Accepts a single point or a batch; returns matching shape.
    """
    pi = spec.target_prior
    if not (0.0 < pi < 1.0):
        raise InvalidArgumentError(f"log-odds needs a target prior strictly inside (0,1), got {pi}")
    single = np.asarray(x).ndim == 1
    log_i = mixture_log_density(task, x)
    log_o = collection_log_density(spec, x)
    dead = (log_i < _LOG_UNDERFLOW) & (log_o < _LOG_UNDERFLOW)
    if np.any(dead):
        raise DegenerateInputError("both densities underflow at the query point(s)")
    u = log_odds_from_log_densities(log_i, log_o, pi)
    return float(u[0]) if single else u


def log_odds_from_log_densities(log_rho_i, log_rho_o, pi: float):
    """ln(pi/(1-pi)) + log_rho_i - log_rho_o, elementwise."""
    return np.log(pi) - np.log1p(-pi) + np.asarray(log_rho_i) - np.asarray(log_rho_o)


def importance_weight(u: float, lam: float = 1.0, pi: float = 0.5) -> float:
    """Density-ratio weight ((1-pi)/pi) * exp(lam * u).

    The exponent is clamped at +/-700 before exponentiation; a clamp emits a
    ``RuntimeWarning`` instead of overflowing.
    """
    if not (0.0 < pi < 1.0):
        raise InvalidArgumentError(f"pi must lie strictly inside (0,1), got {pi}")
    if not np.isfinite(u):
        raise InvalidArgumentError(f"u must be finite, got {u}")
    exponent = lam * u
    if abs(exponent) > _EXP_CLAMP:
        warnings.warn(
            f"importance weight exponent {exponent:.3g} clamped to +/-{_EXP_CLAMP:.0f}",
            RuntimeWarning,
            stacklevel=2,
        )
        exponent = float(np.clip(exponent, -_EXP_CLAMP, _EXP_CLAMP))
    return (1.0 - pi) / pi * float(np.exp(exponent))
