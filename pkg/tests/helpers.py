import numpy as np
from hypothesis import strategies as st

from polynsd.sheaf import MapKind, SheafStructure, build_graph, cayley, skew_from_params

KINDS = list(MapKind)


def path_graph(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def ring_graph(n):
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def random_graph(rng, n, p=0.2, connected=False):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    if connected:
        edges += [(i, i + 1) for i in range(n - 1)]
    return build_graph(n, edges)


def random_maps(rng, kind, E, d, squash=False):
    kind = MapKind.parse(kind)
    if kind is MapKind.DIAGONAL:
        raw = rng.normal(size=(2, E, d))
        data = np.tanh(raw) if squash else raw
        return data[0], data[1]
    if kind is MapKind.ORTHOGONAL:
        k = d * (d - 1) // 2
        S = skew_from_params(rng.normal(size=(2, E, k)), d)
        Q = cayley(S)
        return Q[0], Q[1]
    raw = rng.normal(size=(2, E, d, d))
    data = np.tanh(raw) if squash else raw
    return data[0], data[1]


def random_sheaf(rng, n, d, kind, p=0.3, weights=False, squash=False, graph=None):
    g = graph if graph is not None else random_graph(rng, n, p)
    src, dst = random_maps(rng, kind, g.num_edges, d, squash)
    w = rng.uniform(0.1, 2.0, size=g.num_edges) if weights else None
    return SheafStructure.from_arrays(g, src, dst, kind=kind, edge_weights=w)


def dense_coboundary(sheaf):
    """Independent (E*d, N*d) matrix of the weighted coboundary."""
    g, d = sheaf.graph, sheaf.stalk_dim
    M = np.zeros((g.num_edges * d, g.num_nodes * d))
    w = sheaf.weights()
    for e, (u, v) in enumerate(g.edges):
        r = slice(e * d, (e + 1) * d)
        M[r, v * d:(v + 1) * d] += np.sqrt(w[e]) * sheaf.dst_maps[e]
        M[r, u * d:(u + 1) * d] -= np.sqrt(w[e]) * sheaf.src_maps[e]
    return M


def flat(X):
    """(N, d, C) to (N*d, C), node-major."""
    X = np.asarray(X)
    return X.reshape(X.shape[0] * X.shape[1], -1)


seeds = st.integers(0, 2**31 - 1)
stalk_dims = st.integers(1, 4)
kinds = st.sampled_from(KINDS)
