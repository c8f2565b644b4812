"""Deterministic numeric primitives shared by every pipeline stage.

All functions operate on 1-D float64 arrays ("vectors"), validate their
preconditions, and raise :class:`~hetdistill.errors.InvalidArgumentError`
or :class:`~hetdistill.errors.DegenerateInputError` on violations.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DegenerateInputError, InvalidArgumentError

PROB_SUM_TOL = 1e-9


class Prng:
    """Seeded random source with named, mutually independent sub-streams.

    The same 64-bit seed always yields the same stream.  ``derive(name)``
    returns an independent generator keyed by the path of names from the
    root, so e.g. ``Prng(7).derive("sampler")`` never collides with
    ``Prng(7).derive("student-init")`` and is itself further derivable.
    """

    def __init__(self, seed: int, _path: tuple[str, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = _path
        entropy = [self.seed] + list("/".join(_path).encode("utf-8"))
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, name: str) -> "Prng":
        """Independent sub-generator for the given stream name."""
        return Prng(self.seed, self.path + (name,))

    def __repr__(self) -> str:
        return f"Prng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"


def as_vector(v, name: str = "input") -> np.ndarray:
    """Coerce to a finite 1-D float64 array of length >= 1."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidArgumentError(f"{name} must be a 1-D vector of length >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, name: str = "input") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def softmax(v, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability.

    ``softmax(v, t) == softmax(v / t, 1)`` and the result is invariant
    under adding a constant to every entry of ``v``.
    """
    arr = as_vector(v)
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"temperature must be a positive real, got {temperature}")
    scaled = arr / float(temperature)
    return kernels.softmax_rows(scaled[None, :])[0]


def entropy(p) -> float:
    """Shannon entropy in nats of a probability vector, with 0*ln(0) = 0."""
    arr = as_vector(p, "probabilities")
    if np.any(arr < 0):
        raise InvalidArgumentError("probabilities contain a negative entry")
    total = arr.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise InvalidArgumentError(f"probabilities sum to {total!r}, expected 1 within {PROB_SUM_TOL}")
    nz = arr[arr > 0]
    return float(-(nz * np.log(nz)).sum())


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equally long nonzero vectors."""
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise InvalidArgumentError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for a zero-norm vector")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def quantile(v, fraction: float) -> float:
    """Order statistic at ``fraction`` with linear interpolation between ranks."""
    arr = as_vector(v)
    if not (0.0 <= fraction <= 1.0):
        raise InvalidArgumentError(f"fraction must lie in [0, 1], got {fraction}")
    return float(np.quantile(arr, fraction, method="linear"))


def _checked_probabilities(q) -> np.ndarray:
    arr = as_vector(q, "q")
    if np.any(arr < 0):
        raise InvalidArgumentError("q contains a negative entry")
    total = arr.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise InvalidArgumentError(f"q sums to {total!r}, expected 1 within {PROB_SUM_TOL}")
    return arr


def cumulative_from_probabilities(q: np.ndarray) -> np.ndarray:
    """CDF array for inverse-CDF sampling; last entry forced to exactly 1."""
    cdf = np.cumsum(q)
    cdf[-1] = 1.0
    return cdf


def sample_categorical(q, n_draws: int, rng: Prng) -> np.ndarray:
    """``n_draws`` i.i.d. with-replacement draws from the categorical law ``q``.

    Deterministic given the generator state; uses inverse-CDF lookup.
    """
    probs = _checked_probabilities(q)
    if n_draws < 1:
        raise InvalidArgumentError(f"n_draws must be >= 1, got {n_draws}")
    cdf = cumulative_from_probabilities(probs)
    uniforms = rng.gen.random(int(n_draws))
    return kernels.draw_indices(cdf, uniforms)


def argmax(v) -> int:
    """Index of the maximal entry; ties go to the lowest index."""
    arr = as_vector(v)
    return int(np.argmax(arr))
