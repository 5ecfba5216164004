"""Backbone assembly: input BN, basic blocks, global average pooling, softmax head."""

from __future__ import annotations

import numpy as np

from cdgc.autodiff import Variable, value
from cdgc.errors import DimensionError
from cdgc.graph import PartitionedAdjacency, SkeletonGraph, graph_adjacency
from cdgc.network.config import BackboneConfig
from cdgc.network.layers import BasicBlock, BatchNorm, global_avg_pool, kaiming_uniform, linear, softmax
from cdgc.tensor import as_feature_map


class Model:
    def __init__(self, config: BackboneConfig, adj: PartitionedAdjacency, seed: int = 0):
        self.config = config
        self.adj = adj
        self.seed = seed
        rng = np.random.default_rng(seed)
        V = adj.num_vertices
        self.data_bn = BatchNorm(config.in_channels, "data_bn", V)
        self.blocks = [
            BasicBlock(b, adj, rng, f"block{i}", config.alpha, config.alpha_mode)
            for i, b in enumerate(config.blocks)
        ]
        width = config.blocks[-1].out_channels
        self.fc_weight = Variable(kaiming_uniform(rng, (width, config.num_classes), width), True, "fc.weight")
        self.fc_bias = Variable(np.zeros(config.num_classes), True, "fc.bias")

    @property
    def graph(self) -> SkeletonGraph:
        return self.adj.graph

    @property
    def num_vertices(self) -> int:
        return self.adj.num_vertices

    def parameters(self) -> list[Variable]:
        """Trainable leaves in declaration order."""
        out = self.data_bn.parameters()
        for b in self.blocks:
            out += b.parameters()
        return out + [self.fc_weight, self.fc_bias]

    def alphas(self) -> list[Variable]:
        return [p for p in self.parameters() if p.name.endswith(".alpha")]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = self.data_bn.buffers()
        for b in self.blocks:
            out += b.buffers()
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def check_input(self, x) -> np.ndarray:
        x = as_feature_map(x)
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(f"batch has {x.shape[1]} channels, model expects {self.config.in_channels}")
        if x.shape[3] != self.num_vertices:
            raise DimensionError(f"batch has {x.shape[3]} vertices, graph has {self.num_vertices}")
        return x

    def logits(self, x, train: bool = False) -> Variable:
        h = self.data_bn(self.check_input(value(x)), train)
        for block in self.blocks:
            h = block(h, train)
        return linear(global_avg_pool(h), self.fc_weight, self.fc_bias)

    def project(self) -> None:
        """Clamp learnable blend coefficients to [0, 1]."""
        for a in self.alphas():
            np.clip(a.data, 0.0, 1.0, out=a.data)


def build_model(backbone: BackboneConfig, graph: SkeletonGraph | PartitionedAdjacency, seed: int = 0) -> Model:
    adj = graph if isinstance(graph, PartitionedAdjacency) else graph_adjacency(graph)
    return Model(backbone, adj, seed)


def forward(model: Model, batch) -> np.ndarray:
    """Class probabilities ``(N, num_classes)``, BN in inference mode."""
    return softmax(value(model.logits(batch, train=False)))


def count_parameters(backbone: BackboneConfig, graph: SkeletonGraph | PartitionedAdjacency) -> int:
    return build_model(backbone, graph).param_count()
