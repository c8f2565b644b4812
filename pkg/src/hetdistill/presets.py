"""Named desk-scale tasks and collection recipes used by the CLI and tests.

The 3-class task places its classes on a circle; the irrelevant source sits
in the low-margin region between them, where a trained classifier is least
confident — the desk analog of out-of-distribution inputs that confidence
scores are expected to flag.  Relevant sources are the task translated by a
sub-class-width shift.
"""

from __future__ import annotations

import numpy as np

from .datagen import CollectionSpec, GaussianMixtureTask
from .errors import InvalidArgumentError

# relative ori/rel/irrel mass per collection kind
COLLECTION_FRACTIONS = {
    "ori": (1.0, 0.0, 0.0),
    "rel": (0.0, 1.0, 0.0),
    "irrel": (0.0, 0.0, 1.0),
    "ori+rel": (0.21, 0.79, 0.0),
    "ori+irrel": (0.16, 0.0, 0.84),
    "rel+irrel": (0.0, 0.42, 0.58),
}

TASK_NAMES = ("gauss2", "gauss3")

TEACHER_WIDTHS = {"gauss2": (2, 16, 8), "gauss3": (2, 32, 16)}
STUDENT_WIDTHS = {"gauss2": (2, 12, 8), "gauss3": (2, 24, 12)}


def make_task(name: str) -> GaussianMixtureTask:
    if name == "gauss2":
        means = np.array([[2.0, 0.0], [-2.0, 0.0]])
        return GaussianMixtureTask(means, 0.3, np.full(2, 0.5))
    if name == "gauss3":
        angles = np.deg2rad([90.0, 210.0, 330.0])
        means = 2.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return GaussianMixtureTask(means, 0.6, np.full(3, 1.0 / 3.0))
    raise InvalidArgumentError(f"unknown task {name!r} (expected one of {TASK_NAMES})")


def make_irrel_task(task: GaussianMixtureTask) -> GaussianMixtureTask:
    """Two tight clusters straddling the centroid of the task's class means."""
    center = task.means.mean(axis=0)
    offset = np.zeros(task.feature_dim)
    offset[0] = 0.4
    means = np.stack([center + offset, center - offset])
    return GaussianMixtureTask(means, 0.35, np.full(2, 0.5))


def make_rel_shift(task: GaussianMixtureTask) -> np.ndarray:
    shift = np.zeros(task.feature_dim)
    shift[: min(2, task.feature_dim)] = 0.7
    return shift


def make_collection_spec(task: GaussianMixtureTask, kind: str, n: int) -> CollectionSpec:
    if kind not in COLLECTION_FRACTIONS:
        raise InvalidArgumentError(
            f"unknown collection kind {kind!r} (expected one of {sorted(COLLECTION_FRACTIONS)})"
        )
    ori, rel, irrel = COLLECTION_FRACTIONS[kind]
    return CollectionSpec(
        task=task,
        ori_fraction=ori,
        rel_fraction=rel,
        irrel_fraction=irrel,
        rel_shift=make_rel_shift(task),
        irrel_task=make_irrel_task(task),
        total_size=n,
    )
