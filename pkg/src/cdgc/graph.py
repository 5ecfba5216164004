"""Skeleton topology, spatial partitioning and normalized adjacency.

Vertex pairs within one hop of each other are split into three subsets
relative to the gravity-center joint:

* ``SELF`` (0): the vertex itself,
* ``CENTRIPETAL`` (1): a neighbor at most as far from the center,
* ``CENTRIFUGAL`` (2): a neighbor strictly farther from the center.

Neighbors at the same hop distance as the root go to ``CENTRIPETAL``.

Graph description files are line oriented::

    # comment lines and blank lines are ignored
    V <count> center <index>
    E <i> <j>
    E <i> <j>
    ...

The ``V`` line must come first, exactly once. Every other non-blank line is
an ``E`` line with exactly two integer vertex indices. Any extra token on a
line is an error.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from cdgc.errors import GraphError, ParseError

SELF, CENTRIPETAL, CENTRIFUGAL = 0, 1, 2
NUM_SUBSETS = 3

UNREACHABLE = -1

# NTU RGB+D 25-joint skeleton, 0-based. Joint names (1-based in the dataset):
#  1 spine base      2 spine mid       3 neck            4 head
#  5 l shoulder      6 l elbow         7 l wrist         8 l hand
#  9 r shoulder     10 r elbow        11 r wrist        12 r hand
# 13 l hip          14 l knee         15 l ankle        16 l foot
# 17 r hip          18 r knee         19 r ankle        20 r foot
# 21 spine shoulder 22 l hand tip     23 l thumb        24 r hand tip
# 25 r thumb
NTU_EDGES: tuple[tuple[int, int], ...] = tuple(
    (i - 1, j - 1)
    for i, j in [
        (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
        (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
        (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
        (24, 25), (25, 12),
    ]
)
NTU_NUM_JOINTS = 25
NTU_CENTER = 1  # spine mid

# A few named joints for scenarios and tests.
NTU_LEFT_HAND = 7
NTU_RIGHT_HAND = 11
NTU_LEFT_FOOT = 15
NTU_RIGHT_FOOT = 19


@dataclass(frozen=True)
class SkeletonGraph:
    num_vertices: int
    edges: frozenset[tuple[int, int]]
    center: int
    hop_distance: np.ndarray = field(repr=False, compare=False)

    @property
    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_vertices)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(n) for n in nbrs]

    @property
    def center_distance(self) -> np.ndarray:
        return self.hop_distance[self.center]

    def is_connected(self) -> bool:
        return bool((self.hop_distance[self.center] != UNREACHABLE).all())

    def degree(self, i: int) -> int:
        return sum(1 for e in self.edges if i in e)


def _canonical_edges(num_vertices: int, edges: Iterable[tuple[int, int]]) -> frozenset:
    out = set()
    for e in edges:
        i, j = (int(v) for v in e)
        for v in (i, j):
            if not 0 <= v < num_vertices:
                raise ValueError(f"edge ({i}, {j}) references vertex {v} outside [0, {num_vertices})")
        if i == j:
            raise ValueError(f"self-loop edge ({i}, {j}) is not allowed")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def _hop_matrix(num_vertices: int, edges: frozenset) -> np.ndarray:
    nbrs: list[list[int]] = [[] for _ in range(num_vertices)]
    for i, j in sorted(edges):
        nbrs[i].append(j)
        nbrs[j].append(i)
    hops = np.full((num_vertices, num_vertices), UNREACHABLE, dtype=np.int64)
    for src in range(num_vertices):
        hops[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if hops[src, w] == UNREACHABLE:
                    hops[src, w] = hops[src, u] + 1
                    queue.append(w)
    hops.setflags(write=False)
    return hops


def build_graph(num_vertices: int, edges: Iterable[tuple[int, int]], center: int) -> SkeletonGraph:
    """Build a skeleton graph; hop distances come from BFS, ``-1`` if unreachable."""
    if num_vertices < 1:
        raise ValueError(f"num_vertices must be positive, got {num_vertices}")
    if not 0 <= center < num_vertices:
        raise ValueError(f"center {center} outside [0, {num_vertices})")
    canon = _canonical_edges(num_vertices, edges)
    return SkeletonGraph(num_vertices, canon, int(center), _hop_matrix(num_vertices, canon))


def ntu_graph() -> SkeletonGraph:
    return build_graph(NTU_NUM_JOINTS, NTU_EDGES, NTU_CENTER)


def relabel(graph: SkeletonGraph, perm) -> SkeletonGraph:
    """Rename vertex ``v`` to ``perm[v]``."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(graph.num_vertices)):
        raise ValueError("perm is not a permutation of the vertex set")
    edges = [(perm[i], perm[j]) for i, j in graph.edges]
    return build_graph(graph.num_vertices, edges, perm[graph.center])


Labeling = Mapping[tuple[int, int], int]


def _label_pairs(pairs: Iterable[tuple[int, int]], dist: np.ndarray) -> dict[tuple[int, int], int]:
    labels = {}
    for i, j in pairs:
        if i == j:
            labels[(i, j)] = SELF
        elif dist[j] <= dist[i]:
            labels[(i, j)] = CENTRIPETAL
        else:
            labels[(i, j)] = CENTRIFUGAL
    return labels


def _directed_pairs(num_vertices: int, edges: Iterable[tuple[int, int]]):
    for v in range(num_vertices):
        yield v, v
    for i, j in sorted(edges):
        yield i, j
        yield j, i


def partition(graph: SkeletonGraph) -> dict[tuple[int, int], int]:
    """Label every ordered (root, neighbor) pair within one hop."""
    dist = graph.center_distance
    unreachable = [int(v) for v in np.flatnonzero(dist == UNREACHABLE)]
    if unreachable:
        raise GraphError(f"graph is disconnected: vertices {unreachable} cannot reach center {graph.center}")
    return _label_pairs(_directed_pairs(graph.num_vertices, graph.edges), dist)


def _rowsums(a: np.ndarray) -> np.ndarray:
    # sequential over columns so the result is reproducible by a plain loop
    s = np.zeros(a.shape[0], dtype=np.float64)
    for j in range(a.shape[1]):
        s = s + a[:, j]
    return s.reshape(-1, 1)


@dataclass(frozen=True, eq=False)
class PartitionedAdjacency:
    """Per-subset row-normalized adjacency ``A_k`` and their row sums.

    ``center_distance`` holds the hop distances used for labeling; for
    adjacencies with extra links these stay the anatomical ones.
    """

    graph: SkeletonGraph
    labeling: Mapping[tuple[int, int], int] = field(repr=False)
    subsets: np.ndarray = field(repr=False)  # (K, V, V)
    rowsums: np.ndarray = field(repr=False)  # (K, V, 1)
    center_distance: np.ndarray = field(repr=False)

    @property
    def num_subsets(self) -> int:
        return self.subsets.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.subsets.shape[1]


def _normalize(graph: SkeletonGraph, labeling: Labeling, center_distance) -> PartitionedAdjacency:
    V = graph.num_vertices
    counts = np.zeros((NUM_SUBSETS, V), dtype=np.int64)
    for (i, _j), k in labeling.items():
        counts[k, i] += 1
    subsets = np.zeros((NUM_SUBSETS, V, V), dtype=np.float64)
    for (i, j), k in labeling.items():
        subsets[k, i, j] = 1.0 / counts[k, i]
    rowsums = np.stack([_rowsums(a) for a in subsets])
    subsets.setflags(write=False)
    rowsums.setflags(write=False)
    return PartitionedAdjacency(graph, dict(labeling), subsets, rowsums, center_distance)


def normalized_adjacency(graph: SkeletonGraph, labeling: Labeling) -> PartitionedAdjacency:
    """``A_k[i, j] = 1 / |{j' : label(i, j') = k}|`` for labeled pairs, else 0."""
    return _normalize(graph, labeling, graph.center_distance)


def graph_adjacency(graph: SkeletonGraph) -> PartitionedAdjacency:
    return normalized_adjacency(graph, partition(graph))


def add_extra_links(adj: PartitionedAdjacency, extra_edges: Iterable[tuple[int, int]]) -> PartitionedAdjacency:
    """Add non-anatomical links and re-partition/renormalize.

    New pairs are labeled with the distances stored on ``adj``, so a
    shortcut never relabels existing bones. Links already present are
    ignored; if nothing new is added the input object is returned.
    """
    g = adj.graph
    new = _canonical_edges(g.num_vertices, extra_edges) - g.edges
    if not new:
        return adj
    labels = dict(adj.labeling)
    pairs = [p for i, j in sorted(new) for p in ((i, j), (j, i))]
    labels.update(_label_pairs(pairs, adj.center_distance))
    merged = build_graph(g.num_vertices, g.edges | new, g.center)
    return _normalize(merged, labels, adj.center_distance)


# -- text format ------------------------------------------------------------

def _parse_int(tok: str, lineno: int, path) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", lineno, path) from None


def parse_graph(text: str, path: str | None = None) -> SkeletonGraph:
    header = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if header is None:
            if len(toks) != 4 or toks[0] != "V" or toks[2] != "center":
                raise ParseError("first line must be 'V <count> center <index>'", lineno, path)
            header = (_parse_int(toks[1], lineno, path), _parse_int(toks[3], lineno, path))
            continue
        if toks[0] != "E" or len(toks) != 3:
            raise ParseError(f"expected 'E <i> <j>', got {line!r}", lineno, path)
        edges.append((_parse_int(toks[1], lineno, path), _parse_int(toks[2], lineno, path), lineno))
    if header is None:
        raise ParseError("missing 'V <count> center <index>' line", None, path)
    V, center = header
    for i, j, lineno in edges:
        for v in (i, j):
            if not 0 <= v < V:
                raise ParseError(f"vertex {v} outside [0, {V})", lineno, path)
        if i == j:
            raise ParseError(f"self-loop edge ({i}, {j})", lineno, path)
    try:
        return build_graph(V, [(i, j) for i, j, _ in edges], center)
    except ValueError as exc:
        raise ParseError(str(exc), 1, path) from None


def load_graph(path) -> SkeletonGraph:
    path = Path(path)
    return parse_graph(path.read_text(), str(path))


def format_graph(graph: SkeletonGraph) -> str:
    lines = [f"V {graph.num_vertices} center {graph.center}"]
    lines += [f"E {i} {j}" for i, j in sorted(graph.edges)]
    return "\n".join(lines) + "\n"
