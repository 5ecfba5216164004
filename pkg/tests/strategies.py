"""Shared hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cdgc.graph import build_graph

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def connected_graphs(draw, min_vertices=1, max_vertices=25, max_extra=4):
    V = draw(st.integers(min_vertices, max_vertices))
    parents = [draw(st.integers(0, v - 1)) for v in range(1, V)]
    edges = {(p, v) for v, p in zip(range(1, V), parents)}
    if V > 2:
        pairs = draw(st.lists(st.tuples(st.integers(0, V - 1), st.integers(0, V - 1)), max_size=max_extra))
        edges |= {(min(i, j), max(i, j)) for i, j in pairs if i != j}
    center = draw(st.integers(0, V - 1))
    return build_graph(V, edges, center)


def feature_maps(V, C=None, max_n=2, max_t=3, max_c=4):
    dims = st.tuples(st.integers(1, max_n), st.just(C) if C else st.integers(1, max_c),
                     st.integers(1, max_t), st.just(V))
    return dims.flatmap(lambda shape: hnp.arrays(np.float64, shape, elements=finite))


alphas = st.sampled_from([0.0, 0.3, 0.7, 1.0])
