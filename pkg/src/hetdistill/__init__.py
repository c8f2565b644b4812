"""Desk-scale teacher-student distillation from heterogeneous unlabeled collections."""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
