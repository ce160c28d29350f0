"""Coboundary, block-sparse sheaf Laplacians and their normalised variant."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError, StructuralError
from .sheaf import Cochain, SheafStructure

__all__ = [
    "BlockSparseOperator",
    "coboundary_apply",
    "coboundary_adjoint",
    "assemble_laplacian",
    "normalize_laplacian",
    "laplacian_matvec",
    "block_inv_sqrt",
    "dump_operator",
    "load_operator",
]

SYM_TOL = 1e-12
PSD_TOL = 1e-10


def _values(x) -> np.ndarray:
    if isinstance(x, Cochain):
        return x.values
    x = np.asarray(x, dtype=np.float64)
    return x[:, :, None] if x.ndim == 2 else x


@dataclass(frozen=True, eq=False)
class BlockSparseOperator:
    """``N x N`` grid of dense ``d x d`` blocks, stored row-sorted.

    ``rows``/``cols`` index the stored blocks and ``indptr`` is the CSR row
    pointer over them. ``normalized`` records that the operator came out of
    :func:`normalize_laplacian`, which is what licenses the analytic
    ``lambda_max = 2``.
    """

    num_nodes: int
    stalk_dim: int
    rows: np.ndarray
    cols: np.ndarray
    blocks: np.ndarray
    symmetric: bool = True
    normalized: bool = False
    indptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = np.lexsort((self.cols, self.rows))
        if not np.array_equal(order, np.arange(order.size)):
            object.__setattr__(self, "rows", self.rows[order])
            object.__setattr__(self, "cols", self.cols[order])
            object.__setattr__(self, "blocks", self.blocks[order])
        counts = np.bincount(self.rows, minlength=self.num_nodes)
        object.__setattr__(self, "indptr", np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))

    @classmethod
    def from_coo(cls, num_nodes, stalk_dim, rows, cols, blocks, **flags) -> "BlockSparseOperator":
        """Build from possibly repeated ``(row, col)`` entries, summing duplicates."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        blocks = np.asarray(blocks, dtype=np.float64).reshape(-1, stalk_dim, stalk_dim)
        key = rows * max(num_nodes, 1) + cols
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.zeros((uniq.size, stalk_dim, stalk_dim))
        np.add.at(summed, inv, blocks)
        return cls(num_nodes, stalk_dim, uniq // max(num_nodes, 1), uniq % max(num_nodes, 1),
                   summed, **flags)

    @classmethod
    def from_dense(cls, M: np.ndarray, stalk_dim: int = 1, **flags) -> "BlockSparseOperator":
        M = np.asarray(M, dtype=np.float64)
        d = stalk_dim
        n = M.shape[0] // d
        B = M.reshape(n, d, n, d).transpose(0, 2, 1, 3)
        nz = np.abs(B).reshape(n, n, -1).max(axis=2) > 0
        nz |= np.eye(n, dtype=bool)
        r, c = np.nonzero(nz)
        return cls(n, d, r, c, B[r, c].copy(), **flags)

    @property
    def nnz_blocks(self) -> int:
        return int(self.rows.size)

    @property
    def shape(self) -> tuple[int, int]:
        n = self.num_nodes * self.stalk_dim
        return (n, n)

    def diagonal_blocks(self) -> np.ndarray:
        """``(N, d, d)`` diagonal blocks; zeros where none is stored."""
        out = np.zeros((self.num_nodes, self.stalk_dim, self.stalk_dim))
        mask = self.rows == self.cols
        out[self.rows[mask]] = self.blocks[mask]
        return out

    def to_dense(self) -> np.ndarray:
        n, d = self.num_nodes, self.stalk_dim
        out = np.zeros((n, n, d, d))
        out[self.rows, self.cols] = self.blocks
        return out.transpose(0, 2, 1, 3).reshape(n * d, n * d)

    def matvec(self, X) -> np.ndarray:
        return laplacian_matvec(self, X)

    def affine(self, scale: float, shift: float) -> "BlockSparseOperator":
        """``scale * self + shift * I`` with identity blocks on every node."""
        n, d = self.num_nodes, self.stalk_dim
        diag = np.arange(n)
        rows = np.concatenate([self.rows, diag])
        cols = np.concatenate([self.cols, diag])
        eye = np.broadcast_to(shift * np.eye(d), (n, d, d))
        blocks = np.concatenate([scale * self.blocks, eye])
        return BlockSparseOperator.from_coo(n, d, rows, cols, blocks, symmetric=self.symmetric,
                                            normalized=False)

    def check_symmetry(self, tol: float = SYM_TOL) -> bool:
        key = dict(zip(zip(self.rows.tolist(), self.cols.tolist()), range(self.nnz_blocks)))
        for (r, c), i in key.items():
            j = key.get((c, r))
            other = np.zeros_like(self.blocks[i]) if j is None else self.blocks[j]
            if np.abs(self.blocks[i] - other.T).max(initial=0.0) > tol:
                return False
        return True


def coboundary_apply(sheaf: SheafStructure, x) -> np.ndarray:
    """Edge disagreements ``sqrt(w_e) (F_{v<e} x_v - F_{u<e} x_u)``, shape ``(E, d, C)``."""
    X = _values(x)
    if X.shape[0] != sheaf.graph.num_nodes or X.shape[1] != sheaf.stalk_dim:
        raise ShapeError(f"cochain {X.shape} does not match sheaf "
                         f"(N={sheaf.graph.num_nodes}, d={sheaf.stalk_dim})")
    u, v = sheaf.graph.edges[:, 0], sheaf.graph.edges[:, 1]
    out = sheaf.dst_maps @ X[v] - sheaf.src_maps @ X[u]
    if sheaf.edge_weights is not None:
        out *= np.sqrt(sheaf.edge_weights)[:, None, None]
    return out


def coboundary_adjoint(sheaf: SheafStructure, y: np.ndarray) -> np.ndarray:
    """Transpose of :func:`coboundary_apply`: edge signal ``(E, d, C)`` to nodes."""
    y = np.asarray(y, dtype=np.float64)
    E, d = sheaf.graph.num_edges, sheaf.stalk_dim
    if y.shape[:2] != (E, d):
        raise ShapeError(f"edge signal {y.shape} does not match (E={E}, d={d})")
    if sheaf.edge_weights is not None:
        y = y * np.sqrt(sheaf.edge_weights)[:, None, None]
    u, v = sheaf.graph.edges[:, 0], sheaf.graph.edges[:, 1]
    out = np.zeros((sheaf.graph.num_nodes, d) + y.shape[2:])
    np.add.at(out, v, np.swapaxes(sheaf.dst_maps, 1, 2) @ y)
    np.add.at(out, u, -(np.swapaxes(sheaf.src_maps, 1, 2) @ y))
    return out


def assemble_laplacian(sheaf: SheafStructure) -> BlockSparseOperator:
    """Block form of ``delta^T delta``.

    Diagonal blocks are ``sum_e w_e F_{u<e}^T F_{u<e}``; the off-diagonal
    block at ``(u, v)`` is ``-w_e F_{u<e}^T F_{v<e}`` and ``(v, u)`` holds its
    transpose. Every node gets a diagonal block, even isolated ones.
    """
    g = sheaf.graph
    n, d = g.num_nodes, sheaf.stalk_dim
    u, v = g.edges[:, 0], g.edges[:, 1]
    w = sheaf.weights()[:, None, None]
    Fu, Fv = sheaf.src_maps, sheaf.dst_maps
    FuT, FvT = np.swapaxes(Fu, 1, 2), np.swapaxes(Fv, 1, 2)

    diag = np.zeros((n, d, d))
    np.add.at(diag, u, w * (FuT @ Fu))
    np.add.at(diag, v, w * (FvT @ Fv))
    off = -w * (FuT @ Fv)

    nodes = np.arange(n)
    rows = np.concatenate([nodes, u, v])
    cols = np.concatenate([nodes, v, u])
    blocks = np.concatenate([diag, off, np.swapaxes(off, 1, 2)])
    return BlockSparseOperator(n, d, rows, cols, blocks, symmetric=True)


def block_inv_sqrt(blocks: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """``(B + eps I)^{-1/2}`` for a stack of symmetric PSD blocks."""
    d = blocks.shape[-1]
    sym = 0.5 * (blocks + np.swapaxes(blocks, -1, -2))
    lam, U = np.linalg.eigh(sym)
    if (lam < -PSD_TOL).any():
        i = np.unravel_index(np.argmin(lam), lam.shape)
        raise NumericError(f"diagonal block {i[:-1]} is not PSD (eigenvalue {lam[i]:.3e})")
    lam = np.clip(lam, 0.0, None) + eps
    if (lam <= 0).any():
        raise NumericError("diagonal block is singular; use eps > 0")
    scale = lam ** -0.5
    return (U * scale[..., None, :]) @ np.swapaxes(U, -1, -2) if d else blocks


def normalize_laplacian(L: BlockSparseOperator, eps: float = 1e-8) -> BlockSparseOperator:
    """``D^{-1/2} L D^{-1/2}`` with ``D`` the (regularised) block diagonal of ``L``."""
    Dis = block_inv_sqrt(L.diagonal_blocks(), eps)
    blocks = Dis[L.rows] @ L.blocks @ Dis[L.cols]
    return BlockSparseOperator(L.num_nodes, L.stalk_dim, L.rows, L.cols, blocks,
                               symmetric=L.symmetric, normalized=True)


def laplacian_matvec(L: BlockSparseOperator, X) -> np.ndarray:
    """Block-row aggregation ``(L X)_u = sum_v L_uv X_v`` for ``X`` of shape ``(N, d, C)``."""
    Xv = _values(X)
    if Xv.shape[0] != L.num_nodes or Xv.shape[1] != L.stalk_dim:
        raise ShapeError(f"signal {Xv.shape} does not match operator (N={L.num_nodes}, d={L.stalk_dim})")
    contrib = L.blocks @ Xv[L.cols]
    out = np.zeros(Xv.shape)
    starts = L.indptr[:-1]
    nonempty = np.flatnonzero(np.diff(L.indptr) > 0)
    if nonempty.size:
        out[nonempty] = np.add.reduceat(contrib, starts[nonempty], axis=0)
    return out


def dump_operator(L: BlockSparseOperator, path: str | Path) -> None:
    """Text dump: header ``N d nnz`` then ``u v b00 b01 ...`` row-major per block."""
    with open(path, "w") as fh:
        fh.write(f"{L.num_nodes} {L.stalk_dim} {L.nnz_blocks}\n")
        for r, c, b in zip(L.rows, L.cols, L.blocks):
            vals = " ".join(repr(float(x)) for x in b.ravel())
            fh.write(f"{r} {c} {vals}\n")


def load_operator(path: str | Path) -> BlockSparseOperator:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise StructuralError(f"{path}: bad header {header!r}")
        n, d, nnz = map(int, header)
        rows, cols, blocks = [], [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2 + d * d:
                raise StructuralError(f"{path}:{lineno}: expected {2 + d * d} fields")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            blocks.append([float(p) for p in parts[2:]])
    if len(rows) != nnz:
        raise StructuralError(f"{path}: header says {nnz} blocks, found {len(rows)}")
    return BlockSparseOperator(n, d, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                               np.array(blocks).reshape(-1, d, d))
