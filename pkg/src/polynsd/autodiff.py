"""Minimal reverse-mode differentiation over a fixed set of array primitives.

Each primitive records its inputs and a closure mapping the output gradient
to input gradients. :func:`backward` walks the recorded graph in reverse
topological order. The block-sparse matvec and the Chebyshev recurrence are
fused primitives so that their adjoints run on the same kernels as the
forward pass.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "const",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "neg",
    "scale",
    "sum_all",
    "reshape",
    "swapaxes",
    "gather",
    "segment_sum",
    "concat",
    "diag_embed",
    "tanh",
    "elu",
    "softmax",
    "cross_entropy",
    "skew",
    "cayley",
    "sym_inv_sqrt",
    "block_matvec",
    "cheb_filter",
]


class Var:
    """Array node in a recorded computation."""

    __array_priority__ = 100
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents, fn) -> Var:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Var(value)
    return Var(value, parents=parents, backward_fn=fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Var, seed=None) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every leaf requiring grad."""
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.value) if seed is None else np.asarray(seed, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def neg(a) -> Var:
    return _node(-a.value, (a,), lambda g: (-g,))


def scale(a: Var, c: float) -> Var:
    return _node(c * a.value, (a,), lambda g: (c * g,))


def matmul(a, b) -> Var:
    """Batched ``a @ b`` for operands with at least two dimensions."""
    a, b = const(a), const(b)
    out = a.value @ b.value

    def fn(g):
        ga = g @ np.swapaxes(b.value, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.value, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _node(out, (a, b), fn)


def sum_all(a: Var) -> Var:
    return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


# shape and indexing ---------------------------------------------------------

def reshape(a: Var, shape) -> Var:
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Var, i: int = -1, j: int = -2) -> Var:
    return _node(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _scatter(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


def gather(a: Var, index: np.ndarray) -> Var:
    """Rows ``a[index]`` along axis 0."""
    n = a.shape[0]
    return _node(a.value[index], (a,), lambda g: (_scatter(g, index, n),))


def segment_sum(a: Var, index: np.ndarray, n: int) -> Var:
    """``out[index[i]] += a[i]`` into ``n`` rows."""
    return _node(_scatter(a.value, index, n), (a,), lambda g: (g[index],))


def concat(parts, axis: int = 0) -> Var:
    parts = [const(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _node(np.concatenate([p.value for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def diag_embed(a: Var) -> Var:
    """``(..., d) -> (..., d, d)`` diagonal matrices."""
    d = a.shape[-1]
    idx = np.arange(d)
    out = np.zeros(a.shape + (d,))
    out[..., idx, idx] = a.value
    return _node(out, (a,), lambda g: (g[..., idx, idx],))


# nonlinearities -------------------------------------------------------------

def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def elu(a: Var) -> Var:
    x = a.value
    neg_part = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return _node(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + 1.0),))


def softmax(a: Var) -> Var:
    """Softmax over the last axis."""
    z = np.exp(a.value - a.value.max(axis=-1, keepdims=True))
    s = z / z.sum(axis=-1, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def cross_entropy(logits: Var, labels: np.ndarray, index: np.ndarray) -> Var:
    """Mean softmax cross-entropy over ``logits[index]``; repeated indices count repeatedly."""
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ValueError("cross_entropy needs a nonempty index set")
    z = logits.value[index]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = np.asarray(labels)[index]
    m = index.size
    loss = -logp[np.arange(m), y].mean()

    def fn(g):
        p = np.exp(logp)
        p[np.arange(m), y] -= 1.0
        return (_scatter(p * (g / m), index, logits.shape[0]),)

    return _node(loss, (logits,), fn)


# matrix functions -----------------------------------------------------------

def skew(p: Var, d: int) -> Var:
    """``(..., d(d-1)/2)`` parameters to skew-symmetric ``(..., d, d)``."""
    iu, ju = np.triu_indices(d, k=1)
    S = np.zeros(p.shape[:-1] + (d, d))
    S[..., iu, ju] = p.value
    S[..., ju, iu] = -p.value
    return _node(S, (p,), lambda g: (g[..., iu, ju] - g[..., ju, iu],))


def cayley(S: Var) -> Var:
    """``Q = (I - S)(I + S)^{-1}``."""
    d = S.shape[-1]
    eye = np.eye(d)
    M = np.linalg.inv(eye + S.value)
    Q = (eye - S.value) @ M

    def fn(g):
        return (-np.swapaxes(eye + Q, -1, -2) @ g @ np.swapaxes(M, -1, -2),)

    return _node(Q, (S,), fn)


def sym_inv_sqrt(A: Var, eps: float = 1e-8) -> Var:
    """``(A + eps I)^{-1/2}`` for stacked symmetric PSD ``A`` (negative eigenvalues clipped)."""
    sym = 0.5 * (A.value + np.swapaxes(A.value, -1, -2))
    lam, U = np.linalg.eigh(sym)
    lc = np.clip(lam, 0.0, None) + eps
    f = lc ** -0.5
    fp = np.where(lam > 0, -0.5 * lc ** -1.5, 0.0)
    out = (U * f[..., None, :]) @ np.swapaxes(U, -1, -2)

    def fn(g):
        gs = 0.5 * (g + np.swapaxes(g, -1, -2))
        Gb = np.swapaxes(U, -1, -2) @ gs @ U
        dl = lam[..., :, None] - lam[..., None, :]
        df = f[..., :, None] - f[..., None, :]
        close = np.abs(dl) <= 1e-9 * np.maximum(1.0, np.abs(lam).max(axis=-1))[..., None, None]
        avg = 0.5 * (fp[..., :, None] + fp[..., None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(close, avg, df / np.where(close, 1.0, dl))
        return (U @ (gamma * Gb) @ np.swapaxes(U, -1, -2),)

    return _node(out, (A,), fn)


# block-sparse operators -----------------------------------------------------

def _bmv(blocks, rows, cols, x, n):
    return _scatter(blocks @ x[cols], rows, n)


def _bmv_t(blocks, rows, cols, x, n):
    return _scatter(np.swapaxes(blocks, -1, -2) @ x[rows], cols, n)


def block_matvec(blocks: Var, rows: np.ndarray, cols: np.ndarray, x: Var) -> Var:
    """``y_r = sum_{(r, c)} B_rc x_c`` for blocks ``(nnz, d, d)`` and ``x`` of shape ``(N, d, C)``."""
    n = x.shape[0]
    out = _bmv(blocks.value, rows, cols, x.value, n)

    def fn(g):
        gb = g[rows] @ np.swapaxes(x.value[cols], -1, -2) if blocks.requires_grad else None
        gx = _bmv_t(blocks.value, rows, cols, g, n) if x.requires_grad else None
        return gb, gx

    return _node(out, (blocks, x), fn)


def cheb_filter(blocks: Var, rows: np.ndarray, cols: np.ndarray, lam: float,
                theta: Var, x: Var) -> Var:
    """``sum_k theta_k T_k(L~) x`` with ``L~ = (2/lam) L - I`` and ``L`` given by ``blocks``.

    All ``T_k`` are kept for the reverse pass, which runs the recurrence
    backwards accumulating adjoints of every ``T_k``.
    """
    n = x.shape[0]
    s = 2.0 / lam
    B = blocks.value
    th = theta.value
    K = th.size - 1

    def lt(v):
        return s * _bmv(B, rows, cols, v, n) - v

    def lt_t(v):
        return s * _bmv_t(B, rows, cols, v, n) - v

    T = [x.value]
    if K >= 1:
        T.append(lt(x.value))
    for _ in range(2, K + 1):
        T.append(2.0 * lt(T[-1]) - T[-2])
    out = sum(t * c for t, c in zip(T, th))

    def fn(g):
        gtheta = np.array([np.vdot(g, t) for t in T])
        adj = [c * g for c in th]
        gblocks = np.zeros_like(B) if blocks.requires_grad else None
        for k in range(K, 0, -1):
            mult = 2.0 if k >= 2 else 1.0
            a = adj[k]
            adj[k - 1] = adj[k - 1] + mult * lt_t(a)
            if k >= 2:
                adj[k - 2] = adj[k - 2] - a
            if gblocks is not None:
                gblocks += (mult * s) * (a[rows] @ np.swapaxes(T[k - 1][cols], -1, -2))
        return gblocks, gtheta, adj[0]

    return _node(out, (blocks, theta, x), fn)
