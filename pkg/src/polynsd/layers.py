"""PolyNSD and NSD layers.

The forward passes are written once, on :mod:`polynsd.autodiff` variables,
and serve both plain evaluation (numpy in, numpy out) and training. Fields
of the parameter dataclasses may hold numpy arrays or :class:`Var` leaves.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import RepresentabilityError, ShapeError
from .laplacian import BlockSparseOperator
from .sheaf import Graph, MapKind, SheafStructure, num_map_params
from .spectral import AnalyticNormalized, Gershgorin, lambda_max, parse_strategy

__all__ = [
    "Nonlinearity",
    "SheafLearnerParams",
    "PolyNSDLayerParams",
    "NSDLayerParams",
    "LaplacianBlocks",
    "sheaf_learner_forward",
    "learn_maps",
    "laplacian_blocks",
    "polynsd_core",
    "polynsd_forward",
    "nsd_core",
    "polynsd_params_from",
    "nsd_forward",
    "nsd_to_polynsd",
    "glorot",
]


class Nonlinearity(str, enum.Enum):
    ELU = "elu"
    IDENTITY = "identity"

    def __call__(self, x: Var) -> Var:
        return ad.elu(x) if self is Nonlinearity.ELU else x


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class SheafLearnerParams:
    """Two-layer perceptron ``(x_u || x_v) -> restriction-map data``."""

    kind: MapKind
    stalk_dim: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, kind, d: int, hidden: int, rng: np.random.Generator | None = None,
             zero: bool = False) -> "SheafLearnerParams":
        kind = MapKind.parse(kind)
        out = num_map_params(kind, d)
        if zero or rng is None:
            return cls(kind, d, np.zeros((2 * d, hidden)), np.zeros(hidden),
                       np.zeros((hidden, out)), np.zeros(out))
        return cls(kind, d, glorot(rng, 2 * d, hidden), np.zeros(hidden),
                   glorot(rng, hidden, out), np.zeros(out))

    @property
    def out_dim(self) -> int:
        return num_map_params(self.kind, self.stalk_dim)

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class PolyNSDLayerParams:
    sheaf_learner: SheafLearnerParams
    eta: np.ndarray
    alpha_hp: np.ndarray
    epsilon_gate: np.ndarray
    stalk_mix: np.ndarray | None = None
    channel_mix: np.ndarray | None = None
    nonlinearity: Nonlinearity = Nonlinearity.ELU
    normalize: bool = True
    lambda_max_strategy: object = field(default_factory=AnalyticNormalized)
    eps: float = 1e-8

    @property
    def degree(self) -> int:
        return int(np.shape(_val(self.eta))[0]) - 1

    @property
    def theta(self) -> np.ndarray:
        e = _val(self.eta)
        z = np.exp(e - e.max())
        return z / z.sum()

    def arrays(self) -> dict:
        out = {"eta": self.eta, "alpha_hp": self.alpha_hp, "epsilon_gate": self.epsilon_gate}
        if self.stalk_mix is not None:
            out["stalk_mix"] = self.stalk_mix
        if self.channel_mix is not None:
            out["channel_mix"] = self.channel_mix
        return out


@dataclass
class NSDLayerParams:
    sheaf_learner: SheafLearnerParams
    a_scale: np.ndarray
    b_scale: np.ndarray
    stalk_mix: np.ndarray
    channel_mix: np.ndarray
    nonlinearity: Nonlinearity = Nonlinearity.ELU
    normalize: bool = True
    eps: float = 1e-8

    def arrays(self) -> dict:
        return {"a_scale": self.a_scale, "b_scale": self.b_scale,
                "stalk_mix": self.stalk_mix, "channel_mix": self.channel_mix}


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# sheaf learner --------------------------------------------------------------

def learn_maps(params: SheafLearnerParams, x: Var, graph: Graph) -> tuple[Var, Var]:
    """Restriction maps ``(F_{u<e}, F_{v<e})`` as ``(E, d, d)`` variables.

    Channels are mean-pooled, then each incidence sees its own endpoint first:
    ``F_{u<e} = Phi(x_u || x_v)`` and ``F_{v<e} = Phi(x_v || x_u)``.
    """
    x = ad.const(x)
    n, d, C = x.shape
    if d != params.stalk_dim:
        raise ShapeError(f"learner expects d={params.stalk_dim}, cochain has d={d}")
    E = graph.num_edges
    pooled = ad.scale(ad.matmul(x, np.ones((C, 1))), 1.0 / C).reshape((n, d))
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    first = np.concatenate([u, v])
    second = np.concatenate([v, u])
    inp = ad.concat([ad.gather(pooled, first), ad.gather(pooled, second)], axis=1)
    hidden = ad.elu(inp @ ad.const(params.w1) + ad.const(params.b1))
    raw = hidden @ ad.const(params.w2) + ad.const(params.b2)
    if params.kind is MapKind.DIAGONAL:
        maps = ad.diag_embed(ad.tanh(raw))
    elif params.kind is MapKind.GENERAL:
        maps = ad.tanh(raw).reshape((2 * E, d, d))
    else:
        maps = ad.cayley(ad.skew(raw, d))
    src = ad.gather(maps, np.arange(E))
    dst = ad.gather(maps, np.arange(E, 2 * E))
    return src, dst


def sheaf_learner_forward(params: SheafLearnerParams, x, graph: Graph) -> SheafStructure:
    src, dst = learn_maps(params, ad.const(np.asarray(_val(x))), graph)
    return SheafStructure(graph, params.stalk_dim, params.kind, src.value, dst.value)


# laplacian on variables -----------------------------------------------------

@dataclass
class LaplacianBlocks:
    blocks: Var
    rows: np.ndarray
    cols: np.ndarray
    num_nodes: int
    stalk_dim: int
    normalized: bool

    def operator(self) -> BlockSparseOperator:
        return BlockSparseOperator(self.num_nodes, self.stalk_dim, self.rows, self.cols,
                                   self.blocks.value, symmetric=True, normalized=self.normalized)

    def matvec(self, x: Var) -> Var:
        return ad.block_matvec(self.blocks, self.rows, self.cols, x)


def laplacian_blocks(src: Var, dst: Var, graph: Graph, normalize: bool, eps: float = 1e-8,
                     edge_weights=None) -> LaplacianBlocks:
    """Differentiable block assembly of ``L_F`` (or ``D^{-1/2} L_F D^{-1/2}``)."""
    n = graph.num_nodes
    d = src.shape[-1]
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    srcT, dstT = ad.swapaxes(src), ad.swapaxes(dst)
    uu = srcT @ src
    vv = dstT @ dst
    off = ad.neg(srcT @ dst)
    if edge_weights is not None:
        w = np.asarray(edge_weights, dtype=np.float64)[:, None, None]
        uu, vv, off = uu * w, vv * w, off * w
    diag = ad.segment_sum(ad.concat([uu, vv]), np.concatenate([u, v]), n)
    nodes = np.arange(n)
    rows = np.concatenate([nodes, u, v])
    cols = np.concatenate([nodes, v, u])
    blocks = ad.concat([diag, off, ad.swapaxes(off)])
    if normalize:
        dis = ad.sym_inv_sqrt(diag, eps)
        blocks = ad.gather(dis, rows) @ blocks @ ad.gather(dis, cols)
    return LaplacianBlocks(blocks, rows, cols, n, d, normalize)


def _resolve_lambda(lap: LaplacianBlocks, strategy) -> float:
    strategy = parse_strategy(strategy)
    if isinstance(strategy, AnalyticNormalized) and not lap.normalized:
        strategy = Gershgorin()
    with np.errstate(all="ignore"):
        return float(lambda_max(lap.operator(), strategy))


# layers ---------------------------------------------------------------------

def _mix(x: Var, stalk_mix, channel_mix) -> Var:
    if stalk_mix is not None:
        x = ad.matmul(ad.const(stalk_mix), x)
    if channel_mix is not None:
        x = ad.matmul(x, ad.const(channel_mix))
    return x


def polynsd_core(params: PolyNSDLayerParams, x: Var, graph: Graph,
                 lam: float | None = None, maps=None) -> tuple[Var, float]:
    """One PolyNSD update on variables; returns the output and the lambda_max used.

    ``maps`` overrides the learner with fixed ``(src, dst)`` restriction maps.
    """
    x = ad.const(x)
    src, dst = learn_maps(params.sheaf_learner, x, graph) if maps is None else maps
    lap = laplacian_blocks(ad.const(src), ad.const(dst), graph, params.normalize, params.eps)
    if lam is None:
        lam = _resolve_lambda(lap, params.lambda_max_strategy)
    xm = _mix(x, params.stalk_mix, params.channel_mix)
    theta = ad.softmax(ad.const(params.eta))
    if lam > 0:
        filtered = ad.cheb_filter(lap.blocks, lap.rows, lap.cols, lam, theta, xm)
        hp = x - ad.scale(lap.matvec(x), 1.0 / lam)
    else:
        # L = 0: the rescaled operator is -I for any positive scale
        filtered = ad.cheb_filter(lap.blocks, lap.rows, lap.cols, 1.0, theta, xm)
        hp = x
    z = filtered + ad.const(params.alpha_hp) * hp
    gate = 1.0 + ad.tanh(ad.const(params.epsilon_gate))
    return gate * x - Nonlinearity(params.nonlinearity)(z), lam


def nsd_core(params: NSDLayerParams, x: Var, graph: Graph, maps=None) -> Var:
    """``A x - B sigma(L (W1 x W2))`` with per-channel ``A``, ``B``."""
    x = ad.const(x)
    src, dst = learn_maps(params.sheaf_learner, x, graph) if maps is None else maps
    lap = laplacian_blocks(ad.const(src), ad.const(dst), graph, params.normalize, params.eps)
    xm = _mix(x, params.stalk_mix, params.channel_mix)
    diffused = Nonlinearity(params.nonlinearity)(lap.matvec(xm))
    return ad.const(params.a_scale) * x - ad.const(params.b_scale) * diffused


def _as_cochain(x) -> np.ndarray:
    x = np.asarray(_val(x), dtype=np.float64)
    return x[:, :, None] if x.ndim == 2 else x


def _fixed_maps(sheaf: SheafStructure | None):
    if sheaf is None:
        return None
    return ad.const(sheaf.src_maps), ad.const(sheaf.dst_maps)


def polynsd_forward(params: PolyNSDLayerParams, x, graph: Graph, sheaf: SheafStructure | None = None,
                    lam: float | None = None) -> np.ndarray:
    """Evaluate one PolyNSD layer; ``sheaf`` bypasses the learner when given."""
    out, _ = polynsd_core(params, ad.const(_as_cochain(x)), graph, lam=lam, maps=_fixed_maps(sheaf))
    return out.value


def nsd_forward(params: NSDLayerParams, x, graph: Graph, sheaf: SheafStructure | None = None) -> np.ndarray:
    return nsd_core(params, ad.const(_as_cochain(x)), graph, maps=_fixed_maps(sheaf)).value


def nsd_to_polynsd(A: float, B: float, lambda_max: float) -> tuple[np.ndarray, float, float]:
    """Degree-1 PolyNSD parameters ``(theta, alpha_hp, epsilon)`` realising ``A x - B L x``.

    Uses ``alpha_hp = 0``, ``theta_1 = B lambda_max / 2``, ``theta_0 = 1 - theta_1``
    and ``tanh(epsilon) = A + theta_0 - theta_1 - 1``. ``theta`` must lie in
    the open simplex (softmax weights are strictly positive) and the gate in
    the open range of tanh.
    """
    if not lambda_max > 0:
        raise RepresentabilityError(f"lambda_max must be positive, got {lambda_max}")
    t1 = B * lambda_max / 2.0
    t0 = 1.0 - t1
    if not 0.0 < t1 < 1.0:
        raise RepresentabilityError(
            f"theta_1 = B*lambda_max/2 = {t1:.6g} outside the open simplex (0, 1)")
    gate = A + t0 - t1 - 1.0
    if not abs(gate) < 1.0:
        raise RepresentabilityError(
            f"tanh(epsilon) = A + theta_0 - theta_1 - 1 = {gate:.6g} outside (-1, 1)")
    return np.array([t0, t1]), 0.0, float(np.arctanh(gate))


def polynsd_params_from(theta, alpha_hp: float, epsilon: float, learner: SheafLearnerParams,
                        channels: int, **kw) -> PolyNSDLayerParams:
    """Layer parameters with logits ``log(theta)`` and a constant gate."""
    d = learner.stalk_dim
    return PolyNSDLayerParams(learner, np.log(np.asarray(theta, dtype=np.float64)),
                              np.array(float(alpha_hp)), np.full((d, channels), float(epsilon)), **kw)
