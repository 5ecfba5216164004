"""Randomized self-checks: matrix-vs-loop equivalence and gradient checks.

Every instance is generated from ``default_rng([seed, trial])`` so a
failing case can be replayed from its ``(seed, trial)`` pair alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from cdgc import autodiff as ad
from cdgc import ops
from cdgc.autodiff import GradCheckReport, Variable, finite_difference_check
from cdgc.graph import SkeletonGraph, build_graph, format_graph, graph_adjacency, partition
from cdgc.network.config import BackboneConfig, BasicBlockConfig
from cdgc.network.layers import BasicBlock, softmax_cross_entropy
from cdgc.network.model import build_model

EQUIV_TOL = 1e-10
EQUIV_ALPHAS = (0.0, 0.3, 0.7, 1.0)
MAX_VERTICES = 25
MAX_CHANNELS = 8
GRAD_SCOPES = ("operator", "block", "model")
# pass thresholds per scope; anything at or above fails the check
GRAD_TOL = {"operator": 1e-6, "block": 1e-5, "model": 1e-5}


def normwise_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max(max|a|, max|b|)``, 0 when both are zero."""
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    if diff == 0.0:
        return 0.0
    return diff / scale


def random_graph(rng: np.random.Generator, num_vertices: int, extra_edges: int = 0) -> SkeletonGraph:
    """Random spanning tree plus up to ``extra_edges`` chords, random center."""
    edges = {(int(rng.integers(0, v)), v) for v in range(1, num_vertices)}
    for _ in range(extra_edges):
        i, j = (int(v) for v in rng.integers(0, num_vertices, size=2))
        if i != j:
            edges.add((min(i, j), max(i, j)))
    return build_graph(num_vertices, edges, int(rng.integers(0, num_vertices)))


# -- equivalence -------------------------------------------------------------------

@dataclass
class EquivCase:
    seed: int
    trial: int
    alpha: float
    graph: str           # graph text (see cdgc.graph.format_graph)
    shape: tuple         # (N, C_in, T, V)
    out_channels: int
    error: float
    inject_fault: bool = False


@dataclass
class EquivReport:
    trials: int
    max_error: float = 0.0
    worst: EquivCase | None = None
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_error < EQUIV_TOL


def equiv_instance(seed: int, trial: int):
    rng = np.random.default_rng([seed, trial])
    V = int(rng.integers(2, MAX_VERTICES + 1))
    graph = random_graph(rng, V, int(rng.integers(0, V // 3 + 1)))
    cin = int(rng.integers(1, MAX_CHANNELS + 1))
    cout = int(rng.integers(1, MAX_CHANNELS + 1))
    N, T = int(rng.integers(1, 3)), int(rng.integers(1, 5))
    alpha = EQUIV_ALPHAS[trial % len(EQUIV_ALPHAS)]
    x = rng.normal(size=(N, cin, T, V))
    params = ops.CdgcLayerParams.init(cin, cout, alpha=alpha, rng=rng)
    return graph, x, params


def equiv_trial(seed: int, trial: int, inject_fault: bool = False) -> EquivCase:
    graph, x, params = equiv_instance(seed, trial)
    alpha = params.alpha
    want = ops.cdgc_naive(x, graph, partition(graph), params)
    if inject_fault:
        # self-test of the harness: a wrong blend coefficient on the matrix side
        bad = params.alpha - 0.01 if params.alpha > 0.5 else params.alpha + 0.01
        params = ops.CdgcLayerParams(params.weights, bad)
    got = ops.cdgc_matrix(x, graph_adjacency(graph), params)
    return EquivCase(seed, trial, alpha, format_graph(graph), tuple(x.shape), params.out_channels,
                     normwise_error(got, want), inject_fault)


def equivcheck(trials: int = 100, seed: int = 0, inject_fault: bool = False) -> EquivReport:
    report = EquivReport(trials)
    for t in range(trials):
        case = equiv_trial(seed, t, inject_fault)
        report.errors.append(case.error)
        if report.worst is None or case.error > report.max_error:
            report.max_error = case.error
            report.worst = case
    return report


def write_replay(case: EquivCase, path) -> None:
    data = asdict(case)
    data["shape"] = list(case.shape)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def replay(path) -> EquivCase:
    data = json.loads(Path(path).read_text())
    return equiv_trial(int(data["seed"]), int(data["trial"]), bool(data.get("inject_fault", False)))


# -- gradient checks ----------------------------------------------------------------

def _probe_loss(y, r: np.ndarray) -> Variable:
    """``sum(r * y) + 0.5 * sum(y * y)``: a generic loss with non-degenerate cotangents."""
    return ad.add(ad.ad_sum(ad.mul(y, r)), ad.mul(ad.ad_sum(ad.mul(y, y)), 0.5))


def _merge(total: GradCheckReport, part: GradCheckReport, prefix: str) -> None:
    for name, err in part.per_param.items():
        total.per_param[f"{prefix}{name}"] = err
    if part.worst_param is not None and (total.worst_param is None or part.max_error >= total.max_error):
        total.max_error = part.max_error
        total.worst_param = prefix + part.worst_param
        total.worst_index = part.worst_index


def operator_gradcheck(seed: int, h: float = ad.DEFAULT_H) -> GradCheckReport:
    """All three spatial operators on a small random graph, inputs and parameters checked."""
    rng = np.random.default_rng([seed, 1])
    V = int(rng.integers(4, 8))
    graph = random_graph(rng, V, 1)
    adj = graph_adjacency(graph)
    N, cin, cout, T = 1, 2, 3, 2
    report = GradCheckReport(0.0)

    x = Variable(rng.normal(size=(N, cin, T, V)), True, "x")
    w = Variable(rng.normal(size=(adj.num_subsets, cin, cout)), True, "weights")
    a = Variable(np.array(rng.uniform(0.1, 0.9)), True, "alpha")
    r = rng.normal(size=(N, cout, T, V))
    _merge(report, finite_difference_check(lambda: _probe_loss(ad.vanilla_gconv(x, adj, w), r), [x, w], h),
           "vanilla.")
    _merge(report, finite_difference_check(lambda: _probe_loss(ad.cdgc_matrix(x, adj, w, a), r), [x, w, a], h),
           "cdgc_matrix.")

    w1 = Variable(rng.normal(size=(cin, cout)), True, "weight")
    m = Variable(rng.uniform(0.5, 1.5, size=(V, cin)), True, "mask")
    _merge(report, finite_difference_check(lambda: _probe_loss(ad.accelerated_cdgc(x, w1, m, a), r),
                                           [x, w1, m, a], h), "accelerated_cdgc.")
    return report


def block_gradcheck(seed: int, h: float = ad.DEFAULT_H) -> GradCheckReport:
    """One residual block per spatial operator (channel projection, stride 2), train-mode BN."""
    rng = np.random.default_rng([seed, 2])
    graph = random_graph(rng, 5, 1)
    adj = graph_adjacency(graph)
    report = GradCheckReport(0.0)
    x = Variable(rng.normal(size=(3, 3, 4, 5)), True, "x")
    for op in ("vanilla", "cdgc_matrix", "accelerated_cdgc"):
        cfg = BasicBlockConfig(3, 4, op, temporal_stride=2, residual=True)
        block = BasicBlock(cfg, adj, rng, "block", alpha=0.4, alpha_mode="learnable")
        r = rng.normal(size=(3, 4, 2, 5))
        _merge(report, finite_difference_check(lambda: _probe_loss(block(x, True), r),
                                               [x] + block.parameters(), h), f"{op}.")
    return report


def model_gradcheck(seed: int, h: float = ad.DEFAULT_H) -> GradCheckReport:
    """Two-block tiny models (accelerated and matrix CDGC, learnable alpha) under cross-entropy."""
    rng = np.random.default_rng([seed, 3])
    graph = random_graph(rng, 5, 1)
    report = GradCheckReport(0.0)
    x = rng.normal(size=(4, 3, 4, 5))
    labels = rng.integers(0, 3, size=4)
    for op in ("accelerated_cdgc", "cdgc_matrix"):
        cfg = BackboneConfig.from_schedule((4, 6), (1, 1), spatial_op=op, num_classes=3,
                                           alpha=0.4, alpha_mode="learnable")
        model = build_model(cfg, graph, seed=int(rng.integers(2**31)))
        # random BN affine parameters so no gradient is structurally tiny
        for p in model.parameters():
            if p.name.endswith((".gamma", ".beta")):
                p.data[...] = rng.uniform(0.5, 1.5, size=p.shape) if p.name.endswith("gamma") \
                    else rng.uniform(-0.5, 0.5, size=p.shape)
        _merge(report, finite_difference_check(
            lambda: softmax_cross_entropy(model.logits(x, train=True), labels), model.parameters(), h), f"{op}.")
    return report


def gradcheck(scope: str, seed: int, h: float = ad.DEFAULT_H) -> GradCheckReport:
    if scope not in GRAD_SCOPES:
        raise ValueError(f"scope must be one of {GRAD_SCOPES}, got {scope!r}")
    fn = {"operator": operator_gradcheck, "block": block_gradcheck, "model": model_gradcheck}[scope]
    return fn(seed, h)
