"""Spatial graph operators on ``(N, C, T, V)`` feature maps.

All operators act on each (sample, frame) slice independently. With
``x`` viewed per frame as a ``(V, C)`` matrix ``X``:

* vanilla:     ``Y = sum_k A_k X W_k``
* CDGC:        ``Y = sum_k (A_k X - alpha * Ahat_k * X) W_k``
  where ``Ahat_k`` is the row-sum column of ``A_k`` repeated over channels
* accelerated: ``Y = ((S(X) - alpha * X) * M) W`` where ``S`` is the
  channel-wise circular vertex shift and ``M`` a ``(V, C)`` mask

``cdgc_naive`` evaluates the per-vertex neighbor sums literally and serves
as the oracle for the vectorized form.

Each ``*_vjp`` returns gradients of a scalar loss given ``dy = dL/dY``.
"""

from __future__ import annotations

import functools

from dataclasses import dataclass

import numpy as np

from cdgc.errors import DimensionError
from cdgc.graph import PartitionedAdjacency, SkeletonGraph
from cdgc.tensor import as_feature_map, broadcast_rowsum, hadamard


@dataclass
class CdgcLayerParams:
    """Trainable state of one spatial layer.

    ``weights`` is ``(K, C_in, C_out)``; the accelerated operator uses a
    single subset (``K == 1``) plus ``mask`` of shape ``(V, C_in)``.
    """

    weights: np.ndarray
    alpha: float = 0.3
    mask: np.ndarray | None = None
    learnable_alpha: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim == 2:
            self.weights = self.weights[None]
        if self.weights.ndim != 3:
            raise DimensionError(f"weights must be (K, C_in, C_out), got {self.weights.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)
        self.alpha = float(self.alpha)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[2]

    def clamp_alpha(self) -> None:
        self.alpha = min(1.0, max(0.0, self.alpha))

    def param_count(self) -> int:
        n = self.weights.size
        if self.mask is not None:
            n += self.mask.size
        if self.learnable_alpha:
            n += 1
        return n

    @classmethod
    def init(cls, in_channels: int, out_channels: int, num_subsets: int = 3, *,
             num_vertices: int | None = None, alpha: float = 0.3,
             learnable_alpha: bool = False, rng=None) -> "CdgcLayerParams":
        """Kaiming-uniform weights; an all-ones mask when ``num_vertices`` is given."""
        rng = np.random.default_rng(rng)
        bound = np.sqrt(6.0 / (in_channels * num_subsets))
        w = rng.uniform(-bound, bound, size=(num_subsets, in_channels, out_channels))
        mask = None if num_vertices is None else np.ones((num_vertices, in_channels))
        return cls(w, alpha, mask, learnable_alpha)


# -- shape checks -------------------------------------------------------------

def check_graph_input(x: np.ndarray, adj: PartitionedAdjacency, weights: np.ndarray):
    if x.shape[3] != adj.num_vertices:
        raise DimensionError(f"input has {x.shape[3]} vertices, adjacency has {adj.num_vertices}")
    if weights.shape[0] != adj.num_subsets:
        raise DimensionError(f"{weights.shape[0]} weight matrices for {adj.num_subsets} subsets")
    if weights.shape[1] != x.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, weights expect {weights.shape[1]}")


def check_shift_input(x: np.ndarray, weight: np.ndarray, mask: np.ndarray):
    N, C, T, V = x.shape
    if mask.shape != (V, C):
        raise DimensionError(f"mask shape {mask.shape} does not match (V, C) = {(V, C)}")
    if weight.shape[0] != C:
        raise DimensionError(f"input has {C} channels, weight expects {weight.shape[0]}")


# -- building blocks ------------------------------------------------------------

def aggregate(x: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """``A_k X`` for every subset, shape ``(N, K, C, T, V)``."""
    N, C, T, V = x.shape
    K = subsets.shape[0]
    # one GEMM against [A_0^T | A_1^T | ...]
    stacked = subsets.transpose(2, 0, 1).reshape(V, K * V)
    ax = x.reshape(N * C * T, V) @ stacked
    return ax.reshape(N, C, T, K, V).transpose(0, 3, 1, 2, 4)


def aggregate_transpose(g: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`aggregate`: ``sum_k A_k^T G_k``, shape ``(N, C, T, V)``."""
    N, K, C, T, V = g.shape
    gt = g.transpose(0, 2, 3, 1, 4).reshape(N * C * T, K * V)
    return (gt @ subsets.reshape(K * V, V)).reshape(N, C, T, V)


def center_term(x: np.ndarray, rowsums: np.ndarray) -> np.ndarray:
    """``Ahat_k * X`` for every subset, shape ``(N, K, C, T, V)``."""
    C = x.shape[1]
    return np.stack([hadamard(x, broadcast_rowsum(rs, C)) for rs in rowsums], axis=1)


def mix_subsets(z: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_k Z_k W_k`` over the channel axis: ``(N, K, C, T, V) -> (N, D, T, V)``."""
    N, K, C, T, V = z.shape
    D = weights.shape[2]
    wt = weights.reshape(K * C, D).T
    return np.matmul(wt, z.reshape(N, K * C, T * V)).reshape(N, D, T, V)


def mix_subsets_vjp(dy: np.ndarray, z: np.ndarray, weights: np.ndarray):
    """Returns ``(dz, dweights)`` for :func:`mix_subsets`."""
    N, K, C, T, V = z.shape
    D = weights.shape[2]
    dyf = dy.reshape(N, D, T * V)
    dz = np.matmul(weights.reshape(K * C, D), dyf).reshape(N, K, C, T, V)
    zf = z.reshape(N, K * C, T * V).transpose(1, 0, 2).reshape(K * C, N * T * V)
    dw = zf @ dyf.transpose(0, 2, 1).reshape(N * T * V, D)
    return dz, dw.reshape(K, C, D)


# -- operators -------------------------------------------------------------------

def vanilla_gconv(x, adj: PartitionedAdjacency, params: CdgcLayerParams) -> np.ndarray:
    x = as_feature_map(x)
    check_graph_input(x, adj, params.weights)
    return mix_subsets(aggregate(x, adj.subsets), params.weights)


def cdgc_matrix(x, adj: PartitionedAdjacency, params: CdgcLayerParams) -> np.ndarray:
    """Vectorized central-difference graph convolution."""
    x = as_feature_map(x)
    check_graph_input(x, adj, params.weights)
    return mix_subsets(cdgc_features(x, adj, params.alpha), params.weights)


def cdgc_features(x: np.ndarray, adj: PartitionedAdjacency, alpha: float) -> np.ndarray:
    """``A_k X - alpha * Ahat_k * X`` per subset; the subtraction is skipped at alpha 0."""
    z = aggregate(x, adj.subsets)
    if alpha != 0.0:
        z = z - alpha * center_term(x, adj.rowsums)
    return z


def cdgc_matrix_vjp(dy: np.ndarray, x: np.ndarray, adj: PartitionedAdjacency,
                    weights: np.ndarray, alpha: float, z: np.ndarray | None = None,
                    need_alpha: bool = True):
    """Returns ``(dx, dweights, dalpha)``.

    ``z`` may pass in the forward features to avoid recomputing them;
    ``dalpha`` is 0.0 when ``need_alpha`` is false.
    """
    if z is None:
        z = cdgc_features(x, adj, alpha)
    g, dw = mix_subsets_vjp(dy, z, weights)
    dx = aggregate_transpose(g, adj.subsets)
    rs = adj.rowsums[:, :, 0]  # (K, V)
    # sum_k Ahat_k * G_k
    gc = np.einsum("nkctv,kv->nctv", g, rs)
    if alpha != 0.0:
        dx = dx - alpha * gc
    dalpha = -float(np.sum(gc * x)) if need_alpha else 0.0
    return dx, dw, dalpha


def vanilla_gconv_vjp(dy: np.ndarray, x: np.ndarray, adj: PartitionedAdjacency, weights: np.ndarray):
    """Returns ``(dx, dweights)``."""
    z = aggregate(x, adj.subsets)
    g, dw = mix_subsets_vjp(dy, z, weights)
    return aggregate_transpose(g, adj.subsets), dw


def cdgc_naive(x, graph: SkeletonGraph, labeling, params: CdgcLayerParams) -> np.ndarray:
    """Per-vertex loop over labeled neighbors; clarity over speed.

    ``y(v_i) = sum_j (1/Z_ij) w_k^T [alpha (x_j - x_i) + (1 - alpha) x_j]``
    with ``Z_ij`` the number of neighbors of ``v_i`` sharing ``v_j``'s label.
    """
    x = as_feature_map(x)
    W = params.weights
    alpha = params.alpha
    N, C, T, V = x.shape
    if V != graph.num_vertices:
        raise DimensionError(f"input has {V} vertices, graph has {graph.num_vertices}")
    if W.shape[1] != C:
        raise DimensionError(f"input has {C} channels, weights expect {W.shape[1]}")
    members: dict[tuple[int, int], list[int]] = {}
    for (i, j), k in sorted(labeling.items()):
        members.setdefault((i, k), []).append(j)
    y = np.zeros((N, W.shape[2], T, V))
    for (i, k), js in sorted(members.items()):
        z = len(js)
        for j in js:
            xi = x[:, :, :, i]
            xj = x[:, :, :, j]
            term = alpha * (xj - xi) + (1.0 - alpha) * xj  # (N, C, T)
            y[:, :, :, i] += np.einsum("nct,cd->ndt", term, W[k]) / z
    return y


def shift_index(channels: int, num_vertices: int) -> np.ndarray:
    """``idx[c, i] = (i + c) mod V``: source vertex of shifted slot ``(c, i)``."""
    c = np.arange(channels)[:, None]
    i = np.arange(num_vertices)[None, :]
    return (i + c) % num_vertices


@functools.lru_cache(maxsize=64)
def _flat_shift_index(channels: int, frames: int, num_vertices: int, inverse: bool) -> np.ndarray:
    # flat gather index over one sample's (C, T, V) block
    c = np.arange(channels)[:, None, None]
    t = np.arange(frames)[None, :, None]
    i = np.arange(num_vertices)[None, None, :]
    src = (i - c if inverse else i + c) % num_vertices
    idx = (c * frames + t) * num_vertices + src
    idx = idx.ravel()
    idx.flags.writeable = False
    return idx


def _gather(x, inverse: bool) -> np.ndarray:
    x = as_feature_map(x)
    N, C, T, V = x.shape
    idx = _flat_shift_index(C, T, V, inverse)
    return np.take(x.reshape(N, -1), idx, axis=1).reshape(x.shape)


def spatial_shift(x) -> np.ndarray:
    """``x'[n, c, t, i] = x[n, c, t, (i + c) mod V]``."""
    return _gather(x, False)


def spatial_unshift(x) -> np.ndarray:
    """Inverse (and transpose) of :func:`spatial_shift`."""
    return _gather(x, True)


def pointwise(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Channel map ``(N, C, T, V) x (C, D) -> (N, D, T, V)``."""
    N, C, T, V = x.shape
    return np.matmul(weight.T, x.reshape(N, C, T * V)).reshape(N, weight.shape[1], T, V)


def pointwise_vjp(dy: np.ndarray, x: np.ndarray, weight: np.ndarray):
    N, C, T, V = x.shape
    D = weight.shape[1]
    dyf = dy.reshape(N, D, T * V)
    dx = np.matmul(weight, dyf).reshape(x.shape)
    xf = x.reshape(N, C, T * V).transpose(1, 0, 2).reshape(C, N * T * V)
    dw = xf @ dyf.transpose(0, 2, 1).reshape(N * T * V, D)
    return dx, dw


def shift_difference(x0: np.ndarray, alpha: float) -> np.ndarray:
    """``S(X0) - alpha * X0``; the subtraction is skipped at alpha 0."""
    d = spatial_shift(x0)
    if alpha != 0.0:
        d = d - alpha * x0
    return d


def accelerated_cdgc(x0, params: CdgcLayerParams) -> np.ndarray:
    """Shift-based CDGC: mask the shifted-minus-original features, then mix channels."""
    x0 = as_feature_map(x0)
    if params.weights.shape[0] != 1:
        raise DimensionError(f"accelerated CDGC takes a single weight matrix, got {params.weights.shape[0]}")
    if params.mask is None:
        raise DimensionError("accelerated CDGC needs a (V, C) mask")
    w = params.weights[0]
    check_shift_input(x0, w, params.mask)
    return pointwise(hadamard(shift_difference(x0, params.alpha), params.mask), w)


def accelerated_cdgc_vjp(dy: np.ndarray, x0: np.ndarray, weight: np.ndarray,
                         mask: np.ndarray, alpha: float, d: np.ndarray | None = None,
                         e: np.ndarray | None = None):
    """Returns ``(dx0, dweight, dmask, dalpha)``.

    ``d`` (shift difference) and ``e`` (masked difference) may be passed in
    from the forward pass.
    """
    if d is None:
        d = shift_difference(x0, alpha)
    if e is None:
        e = hadamard(d, mask)
    de, dw = pointwise_vjp(dy, e, weight)
    dmask = np.einsum("nctv,nctv->vc", de, d)
    dd = hadamard(de, mask)
    dx0 = spatial_unshift(dd)
    if alpha != 0.0:
        dx0 = dx0 - alpha * dd
    dalpha = -float(np.sum(dd * x0))
    return dx0, dw, dmask, dalpha


def gradient_antisymmetry_probe(x, graph: SkeletonGraph, i: int, j: int):
    """Center-oriented differences for the adjacent pair ``(i, j)``.

    Returns ``(x_j - x_i, x_i - x_j)``: the gradient seen from ``v_i`` and
    from ``v_j`` respectively, each of shape ``(N, C, T)``.
    """
    x = as_feature_map(x)
    if (min(i, j), max(i, j)) not in graph.edges:
        raise ValueError(f"vertices {i} and {j} are not adjacent")
    xi = x[:, :, :, i]
    xj = x[:, :, :, j]
    return xj - xi, xi - xj
