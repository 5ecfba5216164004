"""Dense float64 kernels used by every operator.

Feature maps are plain ``numpy.ndarray`` objects of shape
``(batch, channels, frames, vertices)``, C-contiguous, so each
``(channel, frame)`` row over vertices is contiguous and per-frame graph
products reduce to ordinary matrix multiplies.

Broadcasting is deliberately narrow. :func:`hadamard` accepts

* operands of identical shape,
* a ``(rows, 1)`` column against a ``(rows, cols)`` matrix,
* a 0-d scalar (trailing-axis scalar broadcast),
* a ``(V, C)`` per-vertex/per-channel matrix against a ``(N, C, T, V)``
  feature map, applied identically to every sample and frame.

Anything else raises :class:`~cdgc.errors.DimensionError`.
"""

from __future__ import annotations

import numpy as np

from cdgc.errors import DimensionError

DTYPE = np.float64


def as_feature_map(x, name: str = "x") -> np.ndarray:
    """Validate and return ``x`` as a C-contiguous float64 rank-4 array."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be rank 4 (N, C, T, V), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise DimensionError(f"{name} has an empty axis: shape {arr.shape}")
    return arr


def as_matrix(a, name: str = "a") -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=DTYPE)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    """Element-wise product under the module's broadcast rule."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim == 0 or a.shape == b.shape:
        return a * b
    if a.ndim == 2 and b.shape == (a.shape[0], 1):
        return a * b
    if a.ndim == 4 and b.shape == (a.shape[3], a.shape[1]):
        # (V, C) frame mask over (N, C, T, V)
        return a * b.T[None, :, None, :]
    raise DimensionError(f"hadamard: shape {b.shape} does not broadcast against {a.shape}")


def broadcast_rowsum(v, channels: int) -> np.ndarray:
    """Repeat an ``(N, 1)`` column ``channels`` times, giving ``(N, channels)``."""
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    v = as_matrix(v, "v")
    if v.shape[1] != 1:
        raise DimensionError(f"broadcast_rowsum expects one column, got shape {v.shape}")
    return v @ np.ones((1, channels), dtype=DTYPE)


def relu(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly zero is zero
    return dy * (x > 0.0)


_BN_SUMS = {False: "nctv->c", True: "nctv->cv"}
_BN_DOTS = {False: "nctv,nctv->c", True: "nctv,nctv->cv"}


def _bn_axes(x: np.ndarray, per_vertex: bool) -> tuple[int, ...]:
    return (0, 2) if per_vertex else (0, 2, 3)


def _bn_param_shape(x: np.ndarray, per_vertex: bool) -> tuple[int, ...]:
    return (1, x.shape[1], 1, x.shape[3]) if per_vertex else (1, x.shape[1], 1, 1)


def _bn_count(x: np.ndarray, per_vertex: bool) -> int:
    n, _, t, v = x.shape
    return n * t if per_vertex else n * t * v


def batch_stats(x: np.ndarray, per_vertex: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Biased mean and variance per channel (or per channel-vertex pair), keepdims shape."""
    shape = _bn_param_shape(x, per_vertex)
    m = _bn_count(x, per_vertex)
    mean = np.einsum(_BN_SUMS[per_vertex], x).reshape(shape) / m
    xc = x - mean
    var = np.einsum(_BN_DOTS[per_vertex], xc, xc).reshape(shape) / m
    return mean, var


def batchnorm_forward(x, gamma, beta, eps: float = 1e-5, per_vertex: bool = False,
                      mean=None, var=None):
    """Batch normalization of a feature map.

    Statistics are taken over (batch, frames, vertices) per channel, or over
    (batch, frames) per (channel, vertex) when ``per_vertex`` is set. Passing
    ``mean``/``var`` uses them instead of batch statistics (inference).

    Returns ``(y, cache)`` where ``cache = (xhat, inv_std)`` feeds
    :func:`batchnorm_backward`.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x = as_feature_map(x)
    shape = _bn_param_shape(x, per_vertex)
    if mean is None or var is None:
        m = _bn_count(x, per_vertex)
        mean = np.einsum(_BN_SUMS[per_vertex], x).reshape(shape) / m
        xhat = x - mean
        var = np.einsum(_BN_DOTS[per_vertex], xhat, xhat).reshape(shape) / m
    else:
        xhat = x - np.reshape(mean, shape)
        var = np.reshape(var, shape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std
    y = xhat * np.reshape(gamma, shape)
    y += np.reshape(beta, shape)
    return y, (xhat, inv_std)


def batchnorm_backward(dy: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gamma,
                       per_vertex: bool = False):
    """Training-mode derivative through the batch statistics.

    Returns ``(dx, dgamma, dbeta)``; parameter gradients have the flat
    parameter shape.
    """
    shape = _bn_param_shape(xhat, per_vertex)
    m = _bn_count(xhat, per_vertex)
    g = np.reshape(gamma, shape)
    dbeta = np.einsum(_BN_SUMS[per_vertex], dy).reshape(shape)
    dgamma = np.einsum(_BN_DOTS[per_vertex], dy, xhat).reshape(shape)
    scale = g * inv_std
    dx = dy * scale
    dx -= xhat * (scale * dgamma / m)
    dx -= scale * dbeta / m
    pshape = np.shape(gamma)
    return dx, dgamma.reshape(pshape), dbeta.reshape(pshape)
