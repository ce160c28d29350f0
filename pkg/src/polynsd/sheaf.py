"""Graphs, restriction maps and cellular sheaves with a single stalk width."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError, StructuralError

__all__ = [
    "MapKind",
    "Graph",
    "RestrictionMap",
    "SheafStructure",
    "Cochain",
    "build_graph",
    "read_edge_list",
    "write_edge_list",
    "num_map_params",
    "cayley",
    "make_restriction",
    "validate_sheaf",
    "identity_sheaf",
]

ORTHO_TOL = 1e-10


class MapKind(str, enum.Enum):
    DIAGONAL = "diagonal"
    ORTHOGONAL = "orthogonal"
    GENERAL = "general"

    @classmethod
    def parse(cls, value: "MapKind | str") -> "MapKind":
        if isinstance(value, cls):
            return value
        aliases = {"diag": "diagonal", "bundle": "orthogonal", "gen": "general"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with canonical ``u < v`` edge orientation.

    ``edges`` is an ``(E, 2)`` int array sorted lexicographically. The CSR
    index (``indptr``, ``indices``, ``incident``) lists, for every node, its
    neighbours and the ids of the edges joining them.
    """

    num_nodes: int
    edges: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    incident: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def distances(self, source: int) -> np.ndarray:
        """Breadth-first hop distances from ``source``; unreachable nodes get -1."""
        dist = np.full(self.num_nodes, -1, dtype=np.int64)
        dist[source] = 0
        frontier = [source]
        while frontier:
            nxt = []
            for u in frontier:
                for w in self.neighbors(u):
                    if dist[w] < 0:
                        dist[w] = dist[u] + 1
                        nxt.append(int(w))
            frontier = nxt
        return dist

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.num_nodes == other.num_nodes and np.array_equal(self.edges, other.edges)

    def __hash__(self) -> int:
        return hash((self.num_nodes, self.edges.tobytes()))


def build_graph(num_nodes: int, edge_list) -> Graph:
    """Canonicalise, deduplicate and index an edge list.

    Both orientations and repeated pairs are accepted; self-loops and
    out-of-range endpoints raise :class:`StructuralError`.
    """
    num_nodes = int(num_nodes)
    if num_nodes < 0:
        raise StructuralError(f"negative node count {num_nodes}")
    arr = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                     dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise StructuralError(f"edge list must be pairs, got shape {arr.shape}")
    bad = (arr < 0) | (arr >= num_nodes)
    if bad.any():
        i = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise StructuralError(f"edge {tuple(arr[i].tolist())} has endpoint outside [0, {num_nodes})")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        i = int(np.argmax(loops))
        raise StructuralError(f"self-loop at node {arr[i, 0]}")

    canon = np.sort(arr, axis=1)
    if canon.shape[0]:
        canon = np.unique(canon, axis=0)
    canon = canon.reshape(-1, 2)

    # CSR over both directions; each entry remembers its edge id
    ne = canon.shape[0]
    src = np.concatenate([canon[:, 0], canon[:, 1]])
    dst = np.concatenate([canon[:, 1], canon[:, 0]])
    eid = np.concatenate([np.arange(ne), np.arange(ne)])
    order = np.lexsort((dst, src))
    counts = np.bincount(src, minlength=num_nodes)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return Graph(num_nodes, canon, indptr, dst[order].astype(np.int64), eid[order].astype(np.int64))


def read_edge_list(path: str | Path, num_nodes: int | None = None) -> Graph:
    """Read ``u<TAB>v`` lines (0-indexed); blanks and ``#`` comments are skipped."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise StructuralError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise StructuralError(f"{path}:{lineno}: non-integer endpoint in {line!r}") from None
    if num_nodes is None:
        num_nodes = 1 + max((max(p) for p in pairs), default=-1)
    return build_graph(num_nodes, pairs)


def write_edge_list(graph: Graph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# num_nodes={graph.num_nodes}\n")
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")


def num_map_params(kind: MapKind | str, d: int) -> int:
    kind = MapKind.parse(kind)
    if kind is MapKind.DIAGONAL:
        return d
    if kind is MapKind.ORTHOGONAL:
        return d * (d - 1) // 2
    return d * d


def skew_from_params(params: np.ndarray, d: int) -> np.ndarray:
    """Fill the strict upper triangle row-major and antisymmetrise (batched)."""
    params = np.asarray(params, dtype=np.float64)
    batch = params.shape[:-1]
    S = np.zeros(batch + (d, d))
    iu = np.triu_indices(d, k=1)
    S[..., iu[0], iu[1]] = params
    return S - np.swapaxes(S, -1, -2)


def cayley(S: np.ndarray) -> np.ndarray:
    """Q = (I - S)(I + S)^-1, batched over leading axes.

    Raises :class:`NumericError` when ``I + S`` is singular, which cannot
    happen for real skew-symmetric ``S`` but can for arbitrary input.
    """
    d = S.shape[-1]
    eye = np.eye(d)
    try:
        inv = np.linalg.inv(eye + S)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Cayley transform is singular: I + S not invertible") from exc
    return (eye - S) @ inv


@dataclass(frozen=True, eq=False)
class RestrictionMap:
    kind: MapKind
    data: np.ndarray
    params: np.ndarray | None = None

    @property
    def stalk_dim(self) -> int:
        return int(self.data.shape[0])

    def matrix(self) -> np.ndarray:
        if self.kind is MapKind.DIAGONAL:
            return np.diag(self.data)
        return self.data


def make_restriction(kind: MapKind | str, stalk_dim: int, params) -> RestrictionMap:
    kind = MapKind.parse(kind)
    d = int(stalk_dim)
    params = np.asarray(params, dtype=np.float64).ravel()
    need = num_map_params(kind, d)
    if params.size != need:
        raise ShapeError(f"{kind.value} map with d={d} needs {need} params, got {params.size}")
    if kind is MapKind.DIAGONAL:
        return RestrictionMap(kind, params.copy())
    if kind is MapKind.ORTHOGONAL:
        return RestrictionMap(kind, cayley(skew_from_params(params, d)), params.copy())
    return RestrictionMap(kind, params.reshape(d, d).copy())


@dataclass(frozen=True, eq=False)
class SheafStructure:
    """A sheaf over ``graph``: one ``(F_{u<e}, F_{v<e})`` pair per canonical edge.

    Maps are held as dense ``(E, d, d)`` stacks, ``src_maps`` for the lower
    endpoint ``u`` and ``dst_maps`` for ``v``, regardless of kind. ``kind``
    records the family the maps were drawn from.
    """

    graph: Graph
    stalk_dim: int
    kind: MapKind
    src_maps: np.ndarray
    dst_maps: np.ndarray
    edge_weights: np.ndarray | None = None

    @classmethod
    def from_maps(cls, graph: Graph, maps, edge_weights=None) -> "SheafStructure":
        """Build from a sequence of ``(RestrictionMap, RestrictionMap)`` pairs."""
        maps = list(maps)
        if len(maps) != graph.num_edges:
            raise StructuralError(f"expected {graph.num_edges} map pairs, got {len(maps)}")
        if not maps:
            raise StructuralError("cannot infer stalk dimension from an edgeless graph; use identity_sheaf")
        kind = maps[0][0].kind
        d = maps[0][0].stalk_dim
        for e, pair in enumerate(maps):
            if len(pair) != 2:
                raise StructuralError(f"edge {e}: need exactly two restriction maps")
            for m in pair:
                if m.kind is not kind or m.stalk_dim != d:
                    raise StructuralError(f"edge {e}: maps must share kind {kind.value} and d={d}")
        src = np.stack([p[0].matrix() for p in maps])
        dst = np.stack([p[1].matrix() for p in maps])
        return cls.from_arrays(graph, src, dst, kind=kind, edge_weights=edge_weights)

    @classmethod
    def from_arrays(cls, graph: Graph, src_maps, dst_maps, kind=MapKind.GENERAL,
                    edge_weights=None) -> "SheafStructure":
        src = np.asarray(src_maps, dtype=np.float64)
        dst = np.asarray(dst_maps, dtype=np.float64)
        if src.ndim == 2:  # diagonal data (E, d)
            src = _diag_stack(src)
            dst = _diag_stack(dst)
        if src.shape != dst.shape or src.ndim != 3 or src.shape[1] != src.shape[2]:
            raise ShapeError(f"map stacks must be (E, d, d); got {src.shape} and {dst.shape}")
        if src.shape[0] != graph.num_edges:
            raise ShapeError(f"{src.shape[0]} map pairs for {graph.num_edges} edges")
        if edge_weights is not None:
            edge_weights = np.asarray(edge_weights, dtype=np.float64).reshape(-1)
            if edge_weights.shape[0] != graph.num_edges:
                raise ShapeError("edge_weights must have one entry per edge")
            if (edge_weights < 0).any():
                raise StructuralError("edge weights must be nonnegative")
        return cls(graph, int(src.shape[1]), MapKind.parse(kind), src, dst, edge_weights)

    def weights(self) -> np.ndarray:
        if self.edge_weights is None:
            return np.ones(self.graph.num_edges)
        return self.edge_weights


def _diag_stack(diag: np.ndarray) -> np.ndarray:
    E, d = diag.shape
    out = np.zeros((E, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = diag
    return out


def identity_sheaf(graph: Graph, d: int = 1, kind: MapKind | str = MapKind.DIAGONAL) -> SheafStructure:
    eye = np.broadcast_to(np.eye(d), (graph.num_edges, d, d)).copy()
    return SheafStructure(graph, d, MapKind.parse(kind), eye, eye.copy())


@dataclass(frozen=True, eq=False)
class Cochain:
    """Node-indexed signal of shape ``(N, d, C)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ShapeError(f"cochain must be (N, d, C), got {v.shape}")
        if not np.isfinite(v).all():
            raise NumericError("cochain has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def check(self, sheaf: SheafStructure) -> None:
        n, d, _ = self.values.shape
        if n != sheaf.graph.num_nodes or d != sheaf.stalk_dim:
            raise ShapeError(f"cochain {self.values.shape} does not match sheaf "
                             f"(N={sheaf.graph.num_nodes}, d={sheaf.stalk_dim})")


def validate_sheaf(sheaf: SheafStructure) -> list[str]:
    """Return one message per violated invariant; empty means valid."""
    report: list[str] = []
    g = sheaf.graph
    d = sheaf.stalk_dim
    if g.edges.size and (g.edges[:, 0] >= g.edges[:, 1]).any():
        report.append("graph edges are not in canonical u<v orientation")
    if g.edges.size and (g.edges.max() >= g.num_nodes):
        report.append("edge endpoint out of range")
    for name, maps in (("src", sheaf.src_maps), ("dst", sheaf.dst_maps)):
        if maps.shape != (g.num_edges, d, d):
            report.append(f"{name} maps have shape {maps.shape}, expected {(g.num_edges, d, d)}")
            continue
        bad = np.argwhere(~np.isfinite(maps))
        for e, i, j in bad:
            u, v = g.edges[e]
            report.append(f"edge {e} ({u},{v}) {name} map has non-finite entry at ({i},{j})")
        if sheaf.kind is MapKind.DIAGONAL:
            off = maps * (1 - np.eye(d))
            for e in np.flatnonzero(np.abs(off).reshape(len(maps), -1).max(axis=1, initial=0) > 0):
                report.append(f"edge {e} {name} map is not diagonal")
        elif sheaf.kind is MapKind.ORTHOGONAL:
            with np.errstate(invalid="ignore"):
                resid = np.linalg.norm(np.swapaxes(maps, 1, 2) @ maps - np.eye(d), axis=(1, 2))
            for e in np.flatnonzero(~(resid <= ORTHO_TOL)):
                u, v = g.edges[e]
                report.append(f"edge {e} ({u},{v}) {name} map orthogonality residual {resid[e]:.3e}")
    if sheaf.edge_weights is not None:
        w = sheaf.edge_weights
        if w.shape != (g.num_edges,):
            report.append(f"edge_weights shape {w.shape}")
        else:
            for e in np.flatnonzero(~(w >= 0)):
                report.append(f"edge {e} has negative or non-finite weight {w[e]}")
    return report
