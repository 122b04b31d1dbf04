"""Sparse kernels, symmetric factorization and preconditioned conjugate gradients.

Sparse storage and the sparse LU kernel come from :mod:`scipy.sparse`.  The
symmetric positive definite factorization is obtained from SuperLU with a
symmetric fill-reducing ordering and diagonal pivoting only, which for SPD
input is a Cholesky factorization in disguise (``U = D L^T``); a non-positive
pivot is reported as :class:`NotSPDError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NotSPDError",
    "ConvergenceError",
    "SparseMatrix",
    "Factorization",
    "CGStats",
    "as_csr",
    "spmv",
    "cholesky",
    "solve_lower",
    "solve_upper",
    "pcg",
    "lanczos_condition",
]


class NotSPDError(ArithmeticError):
    """A factorization met a non-positive pivot."""


class ConvergenceError(RuntimeError):
    """An iterative method did not reach its tolerance."""

    def __init__(self, message: str, stats: "CGStats") -> None:
        super().__init__(message)
        self.stats = stats


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, duplicates summed."""
    M = sp.csr_matrix(A, dtype=float, copy=True)
    M.sum_duplicates()
    M.sort_indices()
    return M


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed-row matrix with a symmetry flag."""

    data: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", as_csr(self.data))
        if self.symmetric and self.data.shape[0] != self.data.shape[1]:
            raise ValueError("a symmetric matrix must be square")

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, symmetric: bool = False) -> "SparseMatrix":
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr(), symmetric)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return spmv(self, x)


def spmv(A, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product."""
    M = A.data if isinstance(A, SparseMatrix) else A
    if M.shape[1] != np.shape(x)[0]:
        raise ValueError(f"dimension mismatch: {M.shape} @ {np.shape(x)}")
    return M @ x


def symmetry_defect(A) -> float:
    """``max|A - A^T| / max|A|``."""
    M = A.data if isinstance(A, SparseMatrix) else sp.csr_matrix(A)
    amax = abs(M).max()
    if amax == 0:
        return 0.0
    return float(abs(M - M.T).max() / amax)


class Factorization:
    """Sparse symmetric positive definite factorization ``P A P^T = L L^T``."""

    def __init__(self, A, check_symmetry: bool = True) -> None:
        M = A.data if isinstance(A, SparseMatrix) else as_csr(A)
        n = M.shape[0]
        if M.shape != (n, n):
            raise ValueError("matrix must be square")
        if check_symmetry and n and symmetry_defect(M) > 1e-10:
            raise ValueError("cholesky requires a symmetric matrix")
        self.n = n
        if n == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(
                sp.csc_matrix(M),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # exactly singular
            raise NotSPDError(f"factorization breakdown: {exc}") from exc
        piv = lu.U.diagonal()
        if not np.all(np.isfinite(piv)) or np.any(piv <= 0.0) or np.any(lu.perm_r != lu.perm_c):
            raise NotSPDError(
                f"non-positive pivot {piv.min():.3e} in symmetric factorization (matrix not SPD)"
            )
        self._lu = lu

    @property
    def perm(self) -> np.ndarray:
        """Row/column permutation ``P`` as an index array (``(P A P^T)[i, j] = A[perm[i], perm[j]]``)."""
        inv = self._lu.perm_c
        perm = np.empty_like(inv)
        perm[inv] = np.arange(inv.size)
        return perm

    @property
    def L(self) -> sp.csc_matrix:
        """Cholesky factor of the permuted matrix."""
        d = np.sqrt(self._lu.U.diagonal())
        return sp.csc_matrix(self._lu.L @ sp.diags(d))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(np.asarray(b, dtype=float))
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve


def cholesky(A) -> Factorization:
    """Factor a symmetric positive definite sparse matrix (raises :class:`NotSPDError`)."""
    return Factorization(A)


def solve_lower(L, b: np.ndarray) -> np.ndarray:
    """Solve ``L x = b`` for sparse lower triangular ``L``."""
    return spla.spsolve_triangular(sp.csr_matrix(L), b, lower=True)


def solve_upper(U, b: np.ndarray) -> np.ndarray:
    """Solve ``U x = b`` for sparse upper triangular ``U``."""
    return spla.spsolve_triangular(sp.csr_matrix(U), b, lower=False)


@dataclass
class CGStats:
    """Convergence record of :func:`pcg`."""

    iterations: int = 0
    initial_residual: float = 0.0
    final_residual: float = 0.0
    kappa: float = 1.0
    lambda_min: float = float("nan")
    lambda_max: float = float("nan")
    residuals: list[float] = field(default_factory=list)
    converged: bool = True


def lanczos_condition(alphas: list[float], betas: list[float]) -> tuple[float, float, float]:
    """Extreme Ritz values from the CG coefficients.

    The Lanczos tridiagonal matrix has diagonal ``1/a_0`` and
    ``1/a_k + b_{k-1}/a_{k-1}`` and off-diagonal ``sqrt(b_{k-1})/a_{k-1}``.
    Returns ``(kappa, lambda_min, lambda_max)``.
    """
    m = len(alphas)
    if m == 0:
        return 1.0, float("nan"), float("nan")
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas[: m - 1], dtype=float)
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    if m == 1:
        ev = diag
    else:
        ev = sla.eigh_tridiagonal(diag, off, eigvals_only=True)
    lo, hi = float(ev.min()), float(ev.max())
    if lo <= 0:
        return float("inf"), lo, hi
    return hi / lo, lo, hi


def pcg(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_M: Callable[[np.ndarray], np.ndarray] | None,
    b: np.ndarray,
    rtol: float = 1e-10,
    maxit: int | None = None,
    raise_on_failure: bool = True,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, CGStats]:
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops when ``||b - A x||_2 <= rtol ||b||_2``.  The condition number of the
    preconditioned operator is estimated from the Lanczos matrix built from the
    CG step lengths.

    Parameters
    ----------
    apply_A, apply_M:
        Operator and preconditioner (``apply_M`` approximates ``A^{-1}``;
        ``None`` means no preconditioning).
    callback:
        Called with the iterate after every step.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    maxit = max(2 * n, 10) if maxit is None else maxit
    M = (lambda v: v) if apply_M is None else apply_M
    x = np.zeros(n)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    stats = CGStats(initial_residual=bnorm, final_residual=bnorm, residuals=[bnorm])
    if bnorm == 0.0:
        return x, stats
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    alphas: list[float] = []
    betas: list[float] = []
    it = 0
    rnorm = bnorm
    while rnorm > rtol * bnorm and it < maxit:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if pAp <= 0 or rz <= 0:
            break  # breakdown: the Krylov space is exhausted (semidefinite case)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rnorm = float(np.linalg.norm(r))
        stats.residuals.append(rnorm)
        alphas.append(alpha)
        if callback is not None:
            callback(x)
        if rnorm <= rtol * bnorm:
            break
        z = M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    stats.iterations = it
    stats.final_residual = rnorm
    stats.kappa, stats.lambda_min, stats.lambda_max = lanczos_condition(alphas, betas)
    stats.converged = rnorm <= rtol * bnorm
    if not stats.converged and raise_on_failure:
        raise ConvergenceError(
            f"PCG did not converge in {it} iterations (relative residual {rnorm / bnorm:.3e})", stats
        )
    return x, stats
