"""Layers of the backbone, built on the tape primitives in :mod:`cdgc.autodiff`.

Temporal kernels live here since only the backbone uses them: a grouped
temporal shift (channels in three groups moved by -1, 0, +1 frames, zero
padded) and a 9-tap temporal convolution. Strided blocks keep every
``stride``-th frame after the temporal operator.
"""

from __future__ import annotations

import numpy as np

from cdgc import autodiff as ad
from cdgc.autodiff import Variable, record, value
from cdgc.errors import DimensionError
from cdgc.graph import PartitionedAdjacency
from cdgc.network.config import BasicBlockConfig
from cdgc.tensor import batch_stats

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
TEMPORAL_KERNEL = 9


# -- temporal kernels --------------------------------------------------------------

def _shift_fold(channels: int) -> int:
    return channels // 3


def temporal_shift_forward(x: np.ndarray) -> np.ndarray:
    C = x.shape[1]
    f = _shift_fold(C)
    out = np.zeros_like(x)
    out[:, :f, :-1] = x[:, :f, 1:]
    out[:, f:C - f] = x[:, f:C - f]
    out[:, C - f:, 1:] = x[:, C - f:, :-1]
    return out


def temporal_shift_backward(g: np.ndarray) -> np.ndarray:
    C = g.shape[1]
    f = _shift_fold(C)
    dx = np.zeros_like(g)
    dx[:, :f, 1:] = g[:, :f, :-1]
    dx[:, f:C - f] = g[:, f:C - f]
    dx[:, C - f:, :-1] = g[:, C - f:, 1:]
    return dx


def temporal_shift(x) -> Variable:
    return record(temporal_shift_forward(value(x)), (x,), lambda g: (temporal_shift_backward(g),))


def subsample(x, stride: int) -> Variable:
    if stride == 1:
        return x
    xv = value(x)

    def vjp(g):
        dx = np.zeros_like(xv)
        dx[:, :, ::stride] = g
        return (dx,)

    return record(np.ascontiguousarray(xv[:, :, ::stride]), (x,), vjp)


def _conv_columns(x: np.ndarray, ksize: int, stride: int) -> np.ndarray:
    N, C, T, V = x.shape
    pad = ksize // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    t_out = (T - 1) // stride + 1
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, :, k:k + span:stride] for k in range(ksize)], axis=1)
    return cols.reshape(N, ksize * C, t_out * V), t_out


def temporal_conv(x, weight, stride: int = 1) -> Variable:
    """``weight`` has shape ``(ksize, C_in, C_out)``; zero padding keeps ``ceil(T / stride)`` frames."""
    xv, wv = value(x), value(weight)
    ksize, cin, cout = wv.shape
    N, C, T, V = xv.shape
    if C != cin:
        raise DimensionError(f"temporal_conv: input has {C} channels, weight expects {cin}")
    cols, t_out = _conv_columns(xv, ksize, stride)
    wf = wv.reshape(ksize * cin, cout)
    y = np.matmul(wf.T, cols).reshape(N, cout, t_out, V)

    def vjp(g):
        gf = g.reshape(N, cout, t_out * V)
        dw = cols.transpose(1, 0, 2).reshape(ksize * cin, -1) @ gf.transpose(0, 2, 1).reshape(-1, cout)
        dcols = np.matmul(wf, gf).reshape(N, ksize, cin, t_out, V)
        pad = ksize // 2
        dxp = np.zeros((N, C, T + 2 * pad, V))
        span = stride * (t_out - 1) + 1
        for k in range(ksize):
            dxp[:, :, k:k + span:stride] += dcols[:, k]
        return dxp[:, :, pad:pad + T], dw.reshape(wv.shape)

    return record(y, (x, weight), vjp)


# -- head ---------------------------------------------------------------------------

def global_avg_pool(x) -> Variable:
    xv = value(x)
    N, C, T, V = xv.shape
    return record(xv.mean(axis=(2, 3)), (x,),
                  lambda g: (np.broadcast_to(g[:, :, None, None] / (T * V), xv.shape).copy(),))


def linear(x, weight, bias) -> Variable:
    xv, wv = value(x), value(weight)
    return record(xv @ wv + value(bias), (x, weight, bias),
                  lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Variable:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    lv = value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = lv.shape[0]
    z = lv - lv.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (d * (float(g) / n),)

    return record(loss, (logits,), vjp)


# -- layers -------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BatchNorm:
    """Per-channel BN, or per (channel, vertex) when ``num_vertices`` is given."""

    def __init__(self, channels: int, name: str, num_vertices: int | None = None):
        shape = (channels,) if num_vertices is None else (channels, num_vertices)
        self.per_vertex = num_vertices is not None
        self.gamma = Variable(np.ones(shape), True, f"{name}.gamma")
        self.beta = Variable(np.zeros(shape), True, f"{name}.beta")
        self.running_mean = np.zeros(shape)
        self.running_var = np.ones(shape)
        self.name = name

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def __call__(self, x, train: bool) -> Variable:
        if not train:
            return ad.batchnorm(x, self.gamma, self.beta, BN_EPS, self.per_vertex,
                                self.running_mean, self.running_var)
        xv = value(x)
        n, _, t, v = xv.shape
        m = n * t if self.per_vertex else n * t * v
        mean, var = batch_stats(xv, self.per_vertex)
        unbiased = var * m / (m - 1) if m > 1 else var
        self.running_mean *= 1.0 - BN_MOMENTUM
        self.running_mean += BN_MOMENTUM * mean.reshape(self.running_mean.shape)
        self.running_var *= 1.0 - BN_MOMENTUM
        self.running_var += BN_MOMENTUM * unbiased.reshape(self.running_var.shape)
        return ad.batchnorm(x, self.gamma, self.beta, BN_EPS, self.per_vertex)


class SpatialOp:
    """One of the three graph operators with its trainable state."""

    def __init__(self, kind: str, cin: int, cout: int, adj: PartitionedAdjacency,
                 rng: np.random.Generator, name: str, alpha, alpha_mode: str):
        self.kind = kind
        self.adj = adj
        V = adj.num_vertices
        if kind == "accelerated_cdgc":
            self.weight = Variable(kaiming_uniform(rng, (cin, cout), cin), True, f"{name}.weight")
            self.mask = Variable(np.ones((V, cin)), True, f"{name}.mask")
        else:
            K = adj.num_subsets
            self.weight = Variable(kaiming_uniform(rng, (K, cin, cout), K * cin), True, f"{name}.weight")
            self.mask = None
        if kind == "vanilla":
            self.alpha = 0.0
        elif alpha_mode == "learnable":
            self.alpha = Variable(np.array(float(alpha)), True, f"{name}.alpha")
        else:
            self.alpha = float(alpha)

    def parameters(self):
        out = [self.weight]
        if self.mask is not None:
            out.append(self.mask)
        if isinstance(self.alpha, Variable):
            out.append(self.alpha)
        return out

    def __call__(self, x) -> Variable:
        if self.kind == "accelerated_cdgc":
            return ad.accelerated_cdgc(x, self.weight, self.mask, self.alpha)
        if self.kind == "vanilla":
            return ad.vanilla_gconv(x, self.adj, self.weight)
        return ad.cdgc_matrix(x, self.adj, self.weight, self.alpha)


class TemporalOp:
    def __init__(self, kind: str, channels: int, stride: int, rng: np.random.Generator, name: str):
        self.kind = kind
        self.stride = stride
        if kind == "shift":
            self.weight = Variable(kaiming_uniform(rng, (channels, channels), channels), True, f"{name}.weight")
        else:
            k = TEMPORAL_KERNEL
            self.weight = Variable(kaiming_uniform(rng, (k, channels, channels), k * channels),
                                   True, f"{name}.weight")

    def parameters(self):
        return [self.weight]

    def __call__(self, x) -> Variable:
        if self.kind == "shift":
            # pointwise map commutes with frame subsampling; subsample first
            return ad.pointwise(subsample(temporal_shift(x), self.stride), self.weight)
        return temporal_conv(x, self.weight, self.stride)


class BasicBlock:
    """spatial -> BN -> ReLU -> temporal -> BN -> (+ residual) -> ReLU."""

    def __init__(self, cfg: BasicBlockConfig, adj: PartitionedAdjacency, rng: np.random.Generator,
                 name: str, alpha=0.3, alpha_mode: str = "fixed"):
        self.cfg = cfg
        V = adj.num_vertices
        self.spatial = SpatialOp(cfg.spatial_op, cfg.in_channels, cfg.out_channels, adj, rng,
                                 f"{name}.spatial", alpha, alpha_mode)
        self.bn_spatial = BatchNorm(cfg.out_channels, f"{name}.bn_spatial")
        self.temporal = TemporalOp(cfg.temporal_op, cfg.out_channels, cfg.temporal_stride, rng,
                                   f"{name}.temporal")
        # shift blocks normalize per (channel, vertex) after the temporal map; a per-vertex BN
        # right after the shift would cancel any per-vertex offset of the block input
        per_vertex = V if cfg.spatial_op == "accelerated_cdgc" else None
        self.bn_temporal = BatchNorm(cfg.out_channels, f"{name}.bn_temporal", per_vertex)
        self.projection = None
        self.bn_projection = None
        if cfg.needs_projection:
            self.projection = Variable(kaiming_uniform(rng, (cfg.in_channels, cfg.out_channels),
                                                       cfg.in_channels), True, f"{name}.projection")
            self.bn_projection = BatchNorm(cfg.out_channels, f"{name}.bn_projection")

    def parameters(self):
        out = self.spatial.parameters() + self.bn_spatial.parameters()
        out += self.temporal.parameters() + self.bn_temporal.parameters()
        if self.projection is not None:
            out += [self.projection] + self.bn_projection.parameters()
        return out

    def buffers(self):
        out = self.bn_spatial.buffers() + self.bn_temporal.buffers()
        if self.bn_projection is not None:
            out += self.bn_projection.buffers()
        return out

    def __call__(self, x, train: bool) -> Variable:
        h = ad.relu(self.bn_spatial(self.spatial(x), train))
        h = self.bn_temporal(self.temporal(h), train)
        if self.cfg.residual:
            if self.projection is None:
                res = x
            else:
                res = ad.pointwise(subsample(x, self.cfg.temporal_stride), self.projection)
                res = self.bn_projection(res, train)
            h = ad.add(h, res)
        return ad.relu(h)
