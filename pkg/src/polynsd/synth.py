"""Synthetic heterophily benchmark: class manifolds with a shared mean on ring-rewired graphs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import Dataset, homophily
from .errors import ConfigError, DomainError
from .sheaf import Graph, build_graph

__all__ = [
    "SyntheticSpec",
    "RewireDiagnostics",
    "REGIMES",
    "class_transition_matrix",
    "balanced_labels",
    "ring_lattice",
    "gen_graph",
    "sphere_embedding",
    "gen_features",
    "stratified_split",
    "gen_dataset",
    "inter_class_fraction",
    "homophily",
]

# feature width per regime
REGIMES = {"risnn": 15, "diff": 4}


@dataclass(frozen=True)
class SyntheticSpec:
    num_nodes: int = 400
    base_degree: int = 4
    num_classes: int = 2
    het: float = 0.5
    feat_noise: float = 0.0
    n_data: int | None = None
    n_h: int = 3
    rewire_prob: float = 1.0
    regime: str = "risnn"
    seed: int = 43

    def __post_init__(self):
        regime = self.regime.lower()
        if regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {sorted(REGIMES)}")
        object.__setattr__(self, "regime", regime)
        if self.n_data is None:
            object.__setattr__(self, "n_data", REGIMES[regime])
        if self.num_classes < 2:
            raise DomainError("need at least two classes")
        if not 0.0 <= self.het <= 1.0:
            raise DomainError("het must lie in [0, 1]")
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise DomainError("rewire_prob must lie in [0, 1]")
        if self.feat_noise < 0:
            raise DomainError("feat_noise must be >= 0")
        if self.n_h < 2:
            raise DomainError("n_h must be >= 2")
        if self.base_degree < 0 or self.base_degree >= self.num_nodes:
            raise DomainError("base_degree must lie in [0, num_nodes)")
        if self.num_nodes < self.num_classes:
            raise DomainError("every class needs at least one node")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RewireDiagnostics:
    attempted: int = 0
    rewired: int = 0
    skipped_no_target: int = 0
    skipped_by_prob: int = 0


def class_transition_matrix(het: float, n_c: int) -> np.ndarray:
    """``(1 - het) I + het / (n_c - 1) (11^T - I)``."""
    if n_c < 2:
        raise DomainError("class transition matrix needs n_c >= 2")
    if not 0.0 <= het <= 1.0:
        raise DomainError("het must lie in [0, 1]")
    eye = np.eye(n_c)
    return (1.0 - het) * eye + het / (n_c - 1) * (np.ones((n_c, n_c)) - eye)


def balanced_labels(n: int, n_c: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Class sizes ``n // n_c`` plus one for the first ``n % n_c`` classes, optionally shuffled."""
    sizes = np.full(n_c, n // n_c)
    sizes[: n % n_c] += 1
    labels = np.repeat(np.arange(n_c), sizes)
    if rng is not None:
        labels = rng.permutation(labels)
    return labels


def ring_lattice(n: int, k: int) -> list[tuple[int, int]]:
    """Edges ``(i, i + j mod n)`` for ``1 <= j <= k / 2``, listed node by node."""
    return [(i, (i + j) % n) for i in range(n) for j in range(1, k // 2 + 1)]


def gen_graph(spec: SyntheticSpec, labels: np.ndarray, rng: np.random.Generator,
              diagnostics: RewireDiagnostics | None = None) -> Graph:
    """Ring lattice whose rightmost edges are rewired toward classes drawn from the transition matrix.

    A rewired edge keeps node ``i`` and moves its far endpoint to a uniformly
    chosen node of the sampled class that is neither ``i`` nor already
    adjacent to ``i``. When no such node exists the edge is left in place.
    """
    n = spec.num_nodes
    diag = diagnostics if diagnostics is not None else RewireDiagnostics()
    R = class_transition_matrix(spec.het, spec.num_classes)
    members = [np.flatnonzero(labels == c) for c in range(spec.num_classes)]
    lattice = ring_lattice(n, spec.base_degree)
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in lattice:
        adj[a].add(b)
        adj[b].add(a)
    edges = []
    for i, j in lattice:
        diag.attempted += 1
        if rng.random() >= spec.rewire_prob:
            diag.skipped_by_prob += 1
            edges.append((i, j))
            continue
        target = rng.choice(spec.num_classes, p=R[labels[i]])
        pool = members[target]
        new = None
        for _ in range(32):
            cand = int(pool[rng.integers(pool.size)])
            if cand != i and cand not in adj[i]:
                new = cand
                break
        if new is None:
            eligible = [int(c) for c in pool if c != i and c not in adj[i]]
            if eligible:
                new = eligible[rng.integers(len(eligible))]
        if new is None:
            diag.skipped_no_target += 1
            edges.append((i, j))
            continue
        adj[i].discard(j)
        adj[j].discard(i)
        adj[i].add(new)
        adj[new].add(i)
        edges.append((i, new))
        diag.rewired += 1
    # an edge moved away earlier may still be listed; keep only live pairs
    live = [(a, b) for a, b in edges if b in adj[a]]
    return build_graph(n, live)


def sphere_embedding(angles: np.ndarray) -> np.ndarray:
    """Hyperspherical coordinates: ``(..., n_h - 1)`` angles to unit vectors ``(..., n_h)``."""
    angles = np.asarray(angles, dtype=np.float64)
    m = angles.shape[-1]
    s = np.sin(angles)
    c = np.cos(angles)
    out = np.ones(angles.shape[:-1] + (m + 1,))
    prod = np.ones(angles.shape[:-1])
    for i in range(m):
        out[..., i] = prod * c[..., i]
        prod = prod * s[..., i]
    out[..., m] = prod
    return out


def _fit_length(z: np.ndarray, n_data: int) -> np.ndarray:
    """Truncate to ``n_data`` columns, or tile cyclically when shorter."""
    width = z.shape[-1]
    if n_data <= width:
        return z[..., :n_data]
    reps = -(-n_data // width)
    return np.tile(z, reps)[..., :n_data]


def gen_features(spec: SyntheticSpec, labels: np.ndarray, rng: np.random.Generator,
                 prototypes: np.ndarray | None = None) -> np.ndarray:
    """``v_k * f(theta)`` on a per-class scaled sphere image, centred, plus Gaussian noise."""
    n, nd, nh = labels.shape[0], spec.n_data, spec.n_h
    if prototypes is None:
        prototypes = rng.uniform(0.0, 1.0, size=(spec.num_classes, nd))
    angles = np.empty((n, nh - 1))
    angles[:, : nh - 2] = rng.uniform(0.0, np.pi, size=(n, nh - 2))
    angles[:, nh - 2] = rng.uniform(0.0, 2 * np.pi, size=n)
    z = _fit_length(sphere_embedding(angles), nd)
    raw = prototypes[labels] * z
    x = raw - raw.mean(axis=0)
    if spec.feat_noise > 0:
        x = x + rng.normal(0.0, spec.feat_noise, size=x.shape)
    return x


def stratified_split(labels: np.ndarray, rng: np.random.Generator,
                     fractions=(0.48, 0.32, 0.20)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * idx.size))
        n_va = int(round(fractions[1] * idx.size))
        train.append(idx[:n_tr])
        val.append(idx[n_tr:n_tr + n_va])
        test.append(idx[n_tr + n_va:])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in (train, val, test))


def gen_dataset(spec: SyntheticSpec, diagnostics: RewireDiagnostics | None = None) -> Dataset:
    """Deterministic in ``spec.seed``; labels, graph, features and splits use separate streams."""
    seeds = np.random.SeedSequence(spec.seed).spawn(4)
    labels = balanced_labels(spec.num_nodes, spec.num_classes, np.random.default_rng(seeds[0]))
    graph = gen_graph(spec, labels, np.random.default_rng(seeds[1]), diagnostics)
    features = gen_features(spec, labels, np.random.default_rng(seeds[2]))
    train, val, test = stratified_split(labels, np.random.default_rng(seeds[3]))
    name = f"synthetic-{spec.regime}-n{spec.num_nodes}-het{spec.het:g}-s{spec.seed}"
    return Dataset(graph, features, labels, train, val, test, name)


def inter_class_fraction(graph: Graph, labels) -> float:
    return 1.0 - homophily(graph, labels)
