"""Spectral scale estimation, rescaling and polynomial filters on block operators.

Chebyshev filters run the three-term recurrence on the rescaled operator
``(2 / lambda_max) L - I`` keeping only two work buffers. The monomial path
and the dense eigendecomposition oracle exist to check it.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

from .errors import CapacityError, DomainError, ShapeError
from .laplacian import BlockSparseOperator, _values, laplacian_matvec

__all__ = [
    "Basis",
    "AnalyticNormalized",
    "Gershgorin",
    "PowerIteration",
    "parse_strategy",
    "FilterSpec",
    "SpectralOracle",
    "PowerResult",
    "power_iteration",
    "gershgorin_bound",
    "lambda_max",
    "rescale",
    "cheb_apply",
    "monomial_apply",
    "cheb_to_monomial",
    "softmax",
    "dense_oracle",
    "dirichlet_energy",
    "operator_norm",
    "ORACLE_CAPACITY",
    "SAFETY_FACTOR",
]

ORACLE_CAPACITY = 500
SAFETY_FACTOR = 1.01


class Basis(str, enum.Enum):
    CHEBYSHEV_CONVEX = "chebyshev"
    MONOMIAL = "monomial"


@dataclass(frozen=True)
class AnalyticNormalized:
    """``lambda_max = 2``; only valid for normalised Laplacians."""

    name = "analytic"


@dataclass(frozen=True)
class Gershgorin:
    """``2 max_v ||D_v||_2`` over the diagonal blocks."""

    name = "gershgorin"


@dataclass(frozen=True)
class PowerIteration:
    max_iters: int = 1000
    tol: float = 1e-9
    seed: int = 0
    name = "power"


LambdaStrategy = AnalyticNormalized | Gershgorin | PowerIteration


def parse_strategy(value) -> LambdaStrategy:
    if isinstance(value, (AnalyticNormalized, Gershgorin, PowerIteration)):
        return value
    if isinstance(value, dict):
        kind = value.get("kind", "power")
        if kind == "power":
            return PowerIteration(**{k: v for k, v in value.items() if k != "kind"})
        return parse_strategy(kind)
    key = str(value).lower()
    if key in ("analytic", "analyticnormalized", "normalized"):
        return AnalyticNormalized()
    if key == "gershgorin":
        return Gershgorin()
    if key in ("power", "poweriteration", "power_iteration"):
        return PowerIteration()
    raise ValueError(f"unknown lambda_max strategy {value!r}")


def softmax(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    z = np.exp(eta - eta.max())
    return z / z.sum()


@dataclass(frozen=True)
class FilterSpec:
    """Degree-``K`` polynomial filter.

    For the Chebyshev basis ``coefficients`` are logits and the effective
    weights are ``theta = softmax(coefficients)``; for the monomial basis they
    are the raw ``c_0 .. c_K``.
    """

    degree: int
    basis: Basis = Basis.CHEBYSHEV_CONVEX
    coefficients: np.ndarray = field(default=None)
    lambda_max_strategy: LambdaStrategy = field(default_factory=AnalyticNormalized)

    def __post_init__(self):
        if self.degree < 0:
            raise DomainError("filter degree must be >= 0")
        coef = self.coefficients
        coef = np.zeros(self.degree + 1) if coef is None else np.asarray(coef, dtype=np.float64)
        if coef.shape != (self.degree + 1,):
            raise ShapeError(f"degree {self.degree} needs {self.degree + 1} coefficients, got {coef.shape}")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "basis", Basis(self.basis))
        object.__setattr__(self, "lambda_max_strategy", parse_strategy(self.lambda_max_strategy))

    @property
    def theta(self) -> np.ndarray:
        if self.basis is Basis.CHEBYSHEV_CONVEX:
            return softmax(self.coefficients)
        return self.coefficients

    def apply(self, L: BlockSparseOperator, X) -> np.ndarray:
        """Filter ``X`` with this spec on the unscaled operator ``L``."""
        if self.basis is Basis.MONOMIAL:
            return monomial_apply(L, self.coefficients, X)
        lam = lambda_max(L, self.lambda_max_strategy)
        return cheb_apply(rescale(L, lam), self.theta, X)

    def to_dict(self) -> dict:
        s = self.lambda_max_strategy
        strat = {"kind": s.name}
        if isinstance(s, PowerIteration):
            strat.update(max_iters=s.max_iters, tol=s.tol, seed=s.seed)
        return {"degree": self.degree, "basis": self.basis.value,
                "coefficients": self.coefficients.tolist(), "lambda_max_strategy": strat}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        return cls(int(d["degree"]), Basis(d.get("basis", "chebyshev")),
                   np.asarray(d.get("coefficients", np.zeros(int(d["degree"]) + 1))),
                   parse_strategy(d.get("lambda_max_strategy", "analytic")))


@dataclass(frozen=True)
class PowerResult:
    rayleigh: float
    iterations: int
    converged: bool

    @property
    def bound(self) -> float:
        return SAFETY_FACTOR * self.rayleigh


def _flat_matvec(L: BlockSparseOperator, x: np.ndarray) -> np.ndarray:
    n, d = L.num_nodes, L.stalk_dim
    return laplacian_matvec(L, x.reshape(n, d, 1)).reshape(-1)


def power_iteration(L: BlockSparseOperator, max_iters: int = 1000, tol: float = 1e-9,
                    seed: int = 0) -> PowerResult:
    """Rayleigh-quotient power iteration from a seeded Gaussian start."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.num_nodes * L.stalk_dim)
    nrm = np.linalg.norm(x)
    if nrm == 0:
        return PowerResult(0.0, 0, True)
    x /= nrm
    prev = None
    rq = 0.0
    for it in range(1, max_iters + 1):
        y = _flat_matvec(L, x)
        rq = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return PowerResult(0.0, it, True)
        if prev is not None and abs(rq - prev) <= tol * abs(rq):
            return PowerResult(rq, it, True)
        prev = rq
        x = y / ny
    return PowerResult(rq, max_iters, False)


def gershgorin_bound(L: BlockSparseOperator) -> float:
    D = L.diagonal_blocks()
    if D.shape[0] == 0:
        return 0.0
    sym = 0.5 * (D + np.swapaxes(D, 1, 2))
    norms = np.abs(np.linalg.eigvalsh(sym)).max(axis=1)
    return float(2.0 * norms.max())


def lambda_max(L: BlockSparseOperator, strategy: LambdaStrategy | str = Gershgorin()) -> float:
    """Upper bound on the spectrum of a symmetric PSD block operator.

    The power-iteration value is the last Rayleigh quotient times
    ``SAFETY_FACTOR``, capped by the Gershgorin bound (both are valid upper
    bounds, so the smaller one is kept). A :class:`RuntimeWarning` is issued
    when the iteration has not converged.
    """
    strategy = parse_strategy(strategy)
    if isinstance(strategy, AnalyticNormalized):
        if not L.normalized:
            raise DomainError("analytic lambda_max = 2 requires a normalised Laplacian")
        return 2.0
    if isinstance(strategy, Gershgorin):
        return gershgorin_bound(L)
    res = power_iteration(L, strategy.max_iters, strategy.tol, strategy.seed)
    if not res.converged:
        warnings.warn(f"power iteration did not converge in {res.iterations} iterations "
                      f"(rayleigh={res.rayleigh:.6g})", RuntimeWarning, stacklevel=2)
    return min(res.bound, gershgorin_bound(L))


def rescale(L: BlockSparseOperator, lambda_max: float) -> BlockSparseOperator:
    """``(2 / lambda_max) L - I``."""
    if not lambda_max > 0:
        raise DomainError(f"lambda_max must be positive, got {lambda_max}")
    return L.affine(2.0 / lambda_max, -1.0)


def cheb_apply(L_tilde: BlockSparseOperator, theta, X) -> np.ndarray:
    """``sum_k theta_k T_k(L_tilde) X`` by the three-term recurrence."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size == 0:
        raise ShapeError("empty coefficient vector")
    X = _values(X)
    t_prev = X
    out = theta[0] * t_prev
    if theta.size == 1:
        return out
    t_cur = laplacian_matvec(L_tilde, X)
    out = out + theta[1] * t_cur
    for k in range(2, theta.size):
        t_prev, t_cur = t_cur, 2.0 * laplacian_matvec(L_tilde, t_cur) - t_prev
        out += theta[k] * t_cur
    return out


def monomial_apply(L: BlockSparseOperator, c, X) -> np.ndarray:
    """``sum_k c_k L^k X`` by Horner's rule."""
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size == 0:
        raise ShapeError("empty coefficient vector")
    X = _values(X)
    out = c[-1] * X
    for ck in c[-2::-1]:
        out = laplacian_matvec(L, out) + ck * X
    return out


def cheb_to_monomial(theta, lambda_max: float | None = None) -> np.ndarray:
    """Monomial coefficients of ``sum_k theta_k T_k``.

    Without ``lambda_max`` the coefficients are in the rescaled variable; with
    it they are in ``L`` itself, substituting ``xi = (2 / lambda_max) L - 1``.
    """
    c = npcheb.cheb2poly(np.asarray(theta, dtype=np.float64))
    if lambda_max is None:
        return c
    p = nppoly.Polynomial(c)(nppoly.Polynomial([-1.0, 2.0 / lambda_max]))
    out = np.zeros(len(c))
    out[:len(p.coef)] = p.coef
    return out


@dataclass(frozen=True)
class SpectralOracle:
    """Dense eigendecomposition ``L = U diag(eigenvalues) U^T`` (ascending)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    stalk_dim: int = 1

    def multiplier(self, fn) -> np.ndarray:
        """Dense matrix ``U fn(Lambda) U^T``."""
        U = self.eigenvectors
        return (U * fn(self.eigenvalues)) @ U.T

    def apply(self, fn, X) -> np.ndarray:
        X = _values(X)
        n, d, C = X.shape
        U = self.eigenvectors
        xhat = U.T @ X.reshape(n * d, C)
        return (U @ (fn(self.eigenvalues)[:, None] * xhat)).reshape(n, d, C)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1]) if self.eigenvalues.size else 0.0


def dense_oracle(L: BlockSparseOperator) -> SpectralOracle:
    n = L.num_nodes * L.stalk_dim
    if n > ORACLE_CAPACITY:
        raise CapacityError(f"dense oracle limited to N*d <= {ORACLE_CAPACITY}, got {n}")
    M = L.to_dense()
    lam, U = np.linalg.eigh(0.5 * (M + M.T))
    return SpectralOracle(lam, U, L.stalk_dim)


def dirichlet_energy(L: BlockSparseOperator, x) -> np.ndarray:
    """Per-channel ``<x, L x>``."""
    X = _values(x)
    return np.einsum("ndc,ndc->c", X, laplacian_matvec(L, X))


def operator_norm(apply, shape: tuple[int, ...], iters: int = 200, seed: int = 0,
                  tol: float = 1e-12) -> float:
    """Power-iteration estimate of ``||A||_2`` for a symmetric linear map ``apply``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = apply(x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        # ||A x|| for unit x never exceeds ||A||
        new = float(ny)
        x = apply(y)
        nx = np.linalg.norm(x)
        if nx == 0:
            return new
        x /= nx
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return max(est, float(np.linalg.norm(apply(x))))
