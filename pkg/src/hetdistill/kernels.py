"""Hot numeric kernels with two interchangeable implementations.

Everything compute-bound in the training and sampling loops funnels through
the six kernels defined here: batched affine layers and their gradients,
rectifier forward/backward, row-wise stable softmax, and inverse-CDF
categorical index lookup.

Two backends exist side by side:

* ``numpy`` — vectorized reference implementations, always available.
* ``numba`` — ``@njit``-compiled loop kernels, used by default when numba
  imports cleanly.

Set ``HETDISTILL_BACKEND=numpy`` to force the pure-numpy path (or
``=numba`` to insist on the compiled one; that raises if numba is absent).
``benchmarks/bench_kernels.py`` times one against the other.

All kernels are float64 in, float64 out, and assume C-contiguous inputs.
They do no validation; callers own the contracts.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "HETDISTILL_BACKEND"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def np_affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched affine map: out[i] = w @ x[i] + b, shapes (n,din),(dout,din),(dout)."""
    return x @ w.T + b


def np_relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def np_relu_backward(grad: np.ndarray, pre: np.ndarray) -> np.ndarray:
    """Mask upstream gradients where pre-activation was <= 0 (gradient at 0 is 0)."""
    return np.where(pre > 0.0, grad, 0.0)


def np_affine_backward(x: np.ndarray, w: np.ndarray, grad: np.ndarray):
    """Gradients of a batched affine map.

    Returns (grad_w, grad_b, grad_x) where grad_w[j,k] = sum_i grad[i,j]*x[i,k]
    (sum over the batch, no averaging).
    """
    grad_w = grad.T @ x
    grad_b = grad.sum(axis=0)
    grad_x = grad @ w
    return grad_w, grad_b, grad_x


def np_softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction; caller applies any temperature."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def np_draw_indices(cdf: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF lookup: smallest i with uniforms < cdf[i]."""
    return np.searchsorted(cdf, uniforms, side="right").astype(np.int64)


_NUMPY_KERNELS = {
    "affine": np_affine,
    "relu": np_relu,
    "relu_backward": np_relu_backward,
    "affine_backward": np_affine_backward,
    "softmax_rows": np_softmax_rows,
    "draw_indices": np_draw_indices,
}


# ---------------------------------------------------------------------------
# numba loop kernels
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def nb_affine(x, w, b):
        n, din = x.shape
        dout = w.shape[0]
        out = np.empty((n, dout))
        for i in range(n):
            for j in range(dout):
                acc = b[j]
                for k in range(din):
                    acc += w[j, k] * x[i, k]
                out[i, j] = acc
        return out

    @njit(cache=True)
    def nb_relu(x):
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                v = x[i, j]
                out[i, j] = v if v > 0.0 else 0.0
        return out

    @njit(cache=True)
    def nb_relu_backward(grad, pre):
        n, d = grad.shape
        out = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                out[i, j] = grad[i, j] if pre[i, j] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def nb_affine_backward(x, w, grad):
        n, din = x.shape
        dout = w.shape[0]
        grad_w = np.zeros((dout, din))
        grad_b = np.zeros(dout)
        grad_x = np.zeros((n, din))
        for i in range(n):
            for j in range(dout):
                g = grad[i, j]
                grad_b[j] += g
                for k in range(din):
                    grad_w[j, k] += g * x[i, k]
                    grad_x[i, k] += g * w[j, k]
        return grad_w, grad_b, grad_x

    @njit(cache=True)
    def nb_softmax_rows(z):
        n, d = z.shape
        out = np.empty((n, d))
        for i in range(n):
            m = z[i, 0]
            for j in range(1, d):
                if z[i, j] > m:
                    m = z[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(z[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def nb_draw_indices(cdf, uniforms):
        n = uniforms.shape[0]
        m = cdf.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            u = uniforms[i]
            lo = 0
            hi = m
            # first index with cdf[idx] > u
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            out[i] = lo
        return out

    return {
        "affine": nb_affine,
        "relu": nb_relu,
        "relu_backward": nb_relu_backward,
        "affine_backward": nb_affine_backward,
        "softmax_rows": nb_softmax_rows,
        "draw_indices": nb_draw_indices,
    }


def _select_backend() -> tuple[str, dict]:
    requested = os.environ.get(_ENV_FLAG, "").strip().lower()
    if requested == "numpy":
        return "numpy", _NUMPY_KERNELS
    try:
        kernels = _build_numba_kernels()
        return "numba", kernels
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", _NUMPY_KERNELS


BACKEND, _ACTIVE = _select_backend()

affine = _ACTIVE["affine"]
relu = _ACTIVE["relu"]
relu_backward = _ACTIVE["relu_backward"]
affine_backward = _ACTIVE["affine_backward"]
softmax_rows = _ACTIVE["softmax_rows"]
draw_indices = _ACTIVE["draw_indices"]


def numpy_kernels() -> dict:
    """The pure-numpy kernel set, regardless of the active backend."""
    return dict(_NUMPY_KERNELS)


def numba_kernels() -> dict:
    """The compiled kernel set; raises ImportError when numba is missing."""
    return _build_numba_kernels()
