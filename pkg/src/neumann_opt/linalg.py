"""Dense vector kernels, symmetric operators, Richardson solver and numerical oracles.

Vectors are plain 1-d ``float64`` numpy arrays throughout the package.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

DIVERGENCE_FACTOR = 1e12
EIGS_DIM_CAP = 2000


class DimensionError(ValueError):
    pass


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"{name} must be a nonempty 1-d array, got shape {v.shape}")
    return v


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


# -- elementwise kernels ------------------------------------------------------

def dot(x, y, deterministic: bool = True) -> float:
    """Inner product. In deterministic mode the sum runs strictly left to right."""
    x, y = as_vector(x), as_vector(y)
    _check_pair(x, y)
    if deterministic:
        # cumsum is a sequential scan, unlike np.sum's pairwise blocking
        return float(np.cumsum(x * y)[-1])
    return float(np.dot(x, y))


def norm(x, deterministic: bool = True) -> float:
    return float(np.sqrt(dot(x, x, deterministic)))


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``y + a*x`` (a new array)."""
    x, y = as_vector(x), as_vector(y)
    _check_pair(x, y)
    return y + a * x


def scale(s: float, x) -> np.ndarray:
    return s * as_vector(x)


# -- operators ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearOperator:
    """A symmetric linear map given only through its action."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __matmul__(self, v):
        v = as_vector(v)
        if v.shape[0] != self.dim:
            raise DimensionError(f"operator has dim {self.dim}, vector has {v.shape[0]}")
        return np.asarray(self.apply(v), dtype=np.float64)

    @classmethod
    def from_matrix(cls, M) -> "LinearOperator":
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {M.shape}")
        return cls(M.shape[0], lambda v: M @ v)

    def shifted(self, sigma: float) -> "LinearOperator":
        """The operator ``A - sigma*I``."""
        return LinearOperator(self.dim, lambda v: self.apply(v) - sigma * v)

    def to_dense(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.column_stack([self @ eye[:, i] for i in range(self.dim)])


def symmetry_defect(A: LinearOperator, rng: np.random.Generator, probes: int = 5) -> float:
    """Largest relative |<Au,v> - <u,Av>| over random probe pairs."""
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(A.dim)
        v = rng.standard_normal(A.dim)
        Au, Av = A @ u, A @ v
        a_est = max(np.linalg.norm(Au) / np.linalg.norm(u), np.linalg.norm(Av) / np.linalg.norm(v))
        gap = abs(np.dot(Au, v) - np.dot(u, Av))
        worst = max(worst, gap / (1.0 + np.linalg.norm(u) * np.linalg.norm(v) * a_est))
    return worst


# -- Richardson / Neumann series ---------------------------------------------

@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    converged: bool
    final_residual: float
    residuals: list[float]


def richardson_solve(A: LinearOperator, b, max_iters: int = 1000, tol: float = 1e-10) -> SolveReport:
    """Solve ``A z = b`` with the truncated Neumann series.

    Iterates ``z_0 = b``, ``z_{t+1} = (I - A) z_t + b``.  Converges when the
    spectrum of ``A`` lies in (0, 2).  ``final_residual`` and ``residuals`` are
    relative: ``||A z - b|| / ||b||``.
    """
    b = as_vector(b, "b")
    if b.shape[0] != A.dim:
        raise DimensionError(f"operator has dim {A.dim}, rhs has {b.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    if tol <= 0:
        raise ValueError("tol must be positive")

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return SolveReport(np.zeros_like(b), 0, True, 0.0, [0.0])
    limit = DIVERGENCE_FACTOR * b_norm

    z = b.copy()
    Az = A @ z
    res = np.linalg.norm(Az - b) / b_norm
    residuals = [res]
    t = 0
    # at least one sweep, so the reported iterate is always z_1 or later
    while t < max(1, max_iters):
        z = z - Az + b
        t += 1
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > limit:
            return SolveReport(z, t, False, float("inf"), residuals)
        Az = A @ z
        res = np.linalg.norm(Az - b) / b_norm
        residuals.append(res)
        if res <= tol:
            break
    return SolveReport(z, t, bool(res <= tol), float(res), residuals)


# -- dense oracles ------------------------------------------------------------

def dense_sym_eigs(M, return_vectors: bool = False, dim_cap: int = EIGS_DIM_CAP, sym_tol: float = 1e-10):
    """Ascending eigenvalues of a dense symmetric matrix (optionally with eigenvectors)."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > dim_cap:
        raise ValueError(f"dimension {M.shape[0]} exceeds oracle cap {dim_cap}")
    scale_ = max(1.0, np.max(np.abs(M)))
    if np.max(np.abs(M - M.T)) > sym_tol * scale_:
        raise ValueError("matrix is not symmetric within tolerance")
    M = 0.5 * (M + M.T)
    if return_vectors:
        return np.linalg.eigh(M)
    return np.linalg.eigvalsh(M)


def dense_solve(M, b) -> np.ndarray:
    """Direct solve of a symmetric nonsingular system through its eigendecomposition."""
    lam, Q = dense_sym_eigs(M, return_vectors=True)
    if np.min(np.abs(lam)) == 0.0:
        raise np.linalg.LinAlgError("singular matrix")
    return Q @ ((Q.T @ as_vector(b)) / lam)


def finite_diff_grad(f: Callable[[np.ndarray], float], w, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient. ``eps`` is relative to each coordinate's magnitude."""
    w = as_vector(w, "w")
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.empty_like(w)
    for i in range(w.size):
        h = eps * max(1.0, abs(w[i]))
        e = np.zeros_like(w)
        e[i] = h
        fp, fm = f(w + e), f(w - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value probing coordinate {i}")
        g[i] = (fp - fm) / (2 * h)
    return g


def finite_diff_hvp(grad_fn: Callable[[np.ndarray], np.ndarray], w, v, eps: float = 1e-4) -> np.ndarray:
    """Central difference of the gradient along ``v``; exact up to rounding for quadratics."""
    w, v = as_vector(w, "w"), as_vector(v, "v")
    _check_pair(w, v)
    vn = np.linalg.norm(v)
    if vn == 0.0:
        raise ValueError("direction v must be nonzero")
    h = eps / max(1.0, vn)
    gp, gm = grad_fn(w + h * v), grad_fn(w - h * v)
    if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
        raise ValueError("non-finite gradient in finite-difference HVP")
    return (gp - gm) / (2 * h)


# -- random streams -----------------------------------------------------------

class RngStream:
    """Seeded generator with independent substreams per ``(purpose, index)``."""

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = _key
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key))
        )

    def substream(self, purpose: str, index: int = 0) -> "RngStream":
        tag = zlib.crc32(purpose.encode("utf-8"))
        return RngStream(self.seed, self._key + (tag, int(index)))

    def __getattr__(self, name):
        # delegate sampling methods (normal, permutation, ...) to the generator
        return getattr(self.gen, name)
