"""Tests for sparse kernels, Cholesky factorization and PCG."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from patchcrime.linalg import (
    CGStats,
    ConvergenceError,
    NotSPDError,
    SparseMatrix,
    cholesky,
    lanczos_condition,
    pcg,
    solve_lower,
    solve_upper,
    spmv,
    symmetry_defect,
)


def random_spd(n: int, seed: int, density: float = 0.05) -> sp.csr_matrix:
    rng = np.random.default_rng(seed)
    R = sp.random(n, n, density=density, random_state=rng, format="csr")
    A = R @ R.T + sp.identity(n) * (1.0 + rng.random())
    return sp.csr_matrix(A)


class TestSparseMatrix:
    """Compressed-row storage and products."""

    def test_canonical_storage(self):
        A = SparseMatrix.from_triplets([0, 0, 1, 0], [1, 0, 1, 1], [1.0, 2.0, 3.0, 4.0], (2, 2))
        assert A.data.has_sorted_indices
        assert A.data.nnz == 3
        np.testing.assert_allclose(A.data.toarray(), [[2.0, 5.0], [0.0, 3.0]])

    def test_spmv(self):
        A = SparseMatrix(sp.identity(4, format="csr"), symmetric=True)
        x = np.arange(4.0)
        np.testing.assert_array_equal(spmv(A, x), x)
        np.testing.assert_array_equal(A @ x, x)

    def test_spmv_dimension_mismatch(self):
        with pytest.raises(ValueError):
            spmv(sp.identity(3, format="csr"), np.zeros(4))

    def test_symmetric_must_be_square(self):
        with pytest.raises(ValueError):
            SparseMatrix(sp.csr_matrix(np.ones((2, 3))), symmetric=True)

    def test_symmetry_defect(self):
        assert symmetry_defect(random_spd(20, 0)) < 1e-15
        assert symmetry_defect(sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))) == pytest.approx(1.0)


class TestCholesky:
    """Sparse SPD factorization."""

    def test_identity(self):
        F = cholesky(sp.identity(5, format="csr"))
        x = np.arange(5.0)
        np.testing.assert_allclose(F.solve(x), x)

    def test_two_by_two(self):
        F = cholesky(sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]])))
        np.testing.assert_allclose(F.solve(np.array([1.0, 2.0])), [1 / 11, 7 / 11], atol=1e-15)

    def test_random_against_dense(self):
        A = random_spd(200, 1)
        b = np.random.default_rng(2).standard_normal(200)
        x = cholesky(A).solve(b)
        xd = np.linalg.solve(A.toarray(), b)
        assert np.linalg.norm(x - xd) <= 1e-10 * max(np.linalg.norm(xd), 1.0)

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_reconstruction(self, seed):
        A = random_spd(100, seed, density=0.03)
        F = cholesky(A)
        p = F.perm
        L = F.L.toarray()
        PAP = A.toarray()[np.ix_(p, p)]
        assert np.abs(L @ L.T - PAP).max() <= 1e-12 * np.abs(PAP).max()
        assert np.allclose(np.triu(L, 1), 0.0)

    def test_indefinite_rejected(self):
        with pytest.raises(NotSPDError):
            cholesky(sp.csr_matrix(np.diag([1.0, -1.0, 2.0])))

    def test_singular_rejected(self):
        with pytest.raises(NotSPDError):
            cholesky(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])))

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]])))

    def test_triangular_solves(self):
        A = random_spd(30, 4)
        F = cholesky(A)
        L = F.L
        b = np.random.default_rng(5).standard_normal(30)
        y = solve_lower(L, b)
        np.testing.assert_allclose(L @ y, b, atol=1e-12)
        z = solve_upper(L.T, b)
        np.testing.assert_allclose(L.T @ z, b, atol=1e-12)


class TestPCG:
    """Conjugate gradients and Lanczos condition estimates."""

    def test_identity_one_iteration(self):
        b = np.arange(1.0, 6.0)
        x, st_ = pcg(lambda v: v, None, b)
        np.testing.assert_allclose(x, b)
        assert st_.iterations == 1

    def test_diagonal_spectrum(self):
        d = np.arange(1.0, 101.0)
        b = np.ones(100)
        x, st_ = pcg(lambda v: d * v, None, b, rtol=1e-10)
        np.testing.assert_allclose(x, 1.0 / d, rtol=1e-8)
        assert 90.0 <= st_.kappa <= 100.0 + 1e-8
        assert st_.lambda_min >= 1.0 - 1e-10 and st_.lambda_max <= 100.0 + 1e-8

    def test_exact_preconditioner(self):
        A = random_spd(80, 6)
        F = cholesky(A)
        b = np.random.default_rng(7).standard_normal(80)
        x, st_ = pcg(lambda v: A @ v, F.solve, b)
        assert st_.iterations <= 2
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_residual_reached(self):
        A = random_spd(150, 8)
        b = np.random.default_rng(9).standard_normal(150)
        x, st_ = pcg(lambda v: A @ v, None, b, rtol=1e-10)
        assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b) * 1.0001
        assert st_.converged and len(st_.residuals) == st_.iterations + 1

    def test_energy_error_monotone(self):
        A = random_spd(60, 10).toarray()
        b = np.random.default_rng(11).standard_normal(60)
        xs = np.linalg.solve(A, b)
        errs = []
        pcg(lambda v: A @ v, None, b, rtol=1e-12, callback=lambda x: errs.append(float((x - xs) @ A @ (x - xs))))
        assert all(e2 <= e1 * (1 + 1e-10) + 1e-24 for e1, e2 in zip(errs, errs[1:]))

    @given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
    @settings(max_examples=15, deadline=None)
    def test_kappa_scale_invariant(self, c, seed):
        A = random_spd(40, seed)
        D = 1.0 / A.diagonal()
        b = np.random.default_rng(seed).standard_normal(40)
        _, s1 = pcg(lambda v: A @ v, lambda v: D * v, b)
        _, s2 = pcg(lambda v: c * (A @ v), lambda v: c * D * v, b)
        assert s2.kappa == pytest.approx(s1.kappa, rel=1e-6)

    def test_zero_rhs(self):
        x, st_ = pcg(lambda v: v, None, np.zeros(3))
        assert st_.iterations == 0 and np.all(x == 0) and st_.kappa == 1.0

    def test_non_convergence(self):
        d = np.arange(1.0, 101.0)
        with pytest.raises(ConvergenceError) as info:
            pcg(lambda v: d * v, None, np.ones(100), maxit=3)
        assert isinstance(info.value.stats, CGStats) and info.value.stats.iterations == 3

    def test_lanczos_empty(self):
        assert lanczos_condition([], [])[0] == 1.0
