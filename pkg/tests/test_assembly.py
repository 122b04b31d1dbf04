"""Tests for dG assembly, the direct solver and dG-norm errors."""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sy

from patchcrime.assembly import (
    ExactSolution,
    ManufacturedProblem,
    QuadratureRule,
    assemble,
    default_eta,
    dg_error,
    interpolate,
    residual_check,
    solve_direct,
)
from patchcrime.domains import box_patch, grid_domain, single_patch_domain
from patchcrime.geometry import FixedWidth, inject_crime
from patchcrime.linalg import cholesky, symmetry_defect


def polynomial(expr_str: str) -> ExactSolution:
    """Exact-solution closures generated from a sympy expression in x, y."""
    x, y = sy.symbols("x y")
    e = sy.sympify(expr_str)
    u = sy.lambdify((x, y), e, "numpy")
    gx = sy.lambdify((x, y), sy.diff(e, x), "numpy")
    gy = sy.lambdify((x, y), sy.diff(e, y), "numpy")
    lap = sy.lambdify((x, y), sy.diff(e, x, 2) + sy.diff(e, y, 2), "numpy")

    def full(fn):
        return lambda X, Y: np.broadcast_to(np.asarray(fn(X, Y), dtype=float), np.shape(X)).copy()

    return ExactSolution(
        full(u), lambda X, Y: np.column_stack([full(gx)(X, Y), full(gy)(X, Y)]), full(lap)
    )


def sipg_oracle(eta: float, g_expr: str):
    """Symbolic SIPG matrix and load vector for two bilinear unit squares [0,1]^2 and [1,2]^2.

    Built from the textbook symmetric interior penalty form with weak Dirichlet
    conditions on the outer boundary, penalty ``eta / h`` and ``h = sqrt(2)``
    (the parametric element diameter of a single element).
    """
    x, y = sy.symbols("x y")
    g = sy.sympify(g_expr)
    f = -(sy.diff(g, x, 2) + sy.diff(g, y, 2))
    h = sy.sqrt(2)
    sig = sy.Integer(eta) / h if float(eta).is_integer() else sy.nsimplify(eta) / h

    def shapes(x0):
        s = x - x0
        return [(1 - s) * (1 - y), s * (1 - y), (1 - s) * y, s * y]

    phi = [shapes(0), shapes(1)]
    n = 8
    K = sy.zeros(n, n)
    F = sy.zeros(n, 1)

    def gidx(i, a):
        return 4 * i + a

    # volume terms and loads
    for i, x0 in enumerate((0, 1)):
        for a in range(4):
            F[gidx(i, a)] += sy.integrate(f * phi[i][a], (x, x0, x0 + 1), (y, 0, 1))
            for b in range(4):
                val = sy.integrate(
                    sy.diff(phi[i][a], x) * sy.diff(phi[i][b], x) + sy.diff(phi[i][a], y) * sy.diff(phi[i][b], y),
                    (x, x0, x0 + 1),
                    (y, 0, 1),
                )
                K[gidx(i, a), gidx(i, b)] += val
    # Dirichlet faces: (patch, fixed variable, value, outward normal, free variable range)
    faces = [
        (0, x, 0, (-1, 0), (y, 0, 1)),
        (1, x, 2, (1, 0), (y, 0, 1)),
        (0, y, 0, (0, -1), (x, 0, 1)),
        (0, y, 1, (0, 1), (x, 0, 1)),
        (1, y, 0, (0, -1), (x, 1, 2)),
        (1, y, 1, (0, 1), (x, 1, 2)),
    ]
    for i, var, val, nrm, rng in faces:
        def dn(w):
            return nrm[0] * sy.diff(w, x) + nrm[1] * sy.diff(w, y)

        for a in range(4):
            va = phi[i][a]
            F[gidx(i, a)] += sy.integrate(((-dn(va) + sig * va) * g).subs(var, val), rng)
            for b in range(4):
                ub = phi[i][b]
                term = -dn(ub) * va - dn(va) * ub + sig * ub * va
                K[gidx(i, a), gidx(i, b)] += sy.integrate(term.subs(var, val), rng)
    # interface x = 1, normal +x from patch 0: jump [w] = w0 - w1, average {w} = (w0 + w1)/2
    basis = [(0, a) for a in range(4)] + [(1, a) for a in range(4)]

    def jump(i, a):
        return phi[i][a] if i == 0 else -phi[i][a]

    def avg_dn(i, a):
        return sy.diff(phi[i][a], x) / 2

    for i, a in basis:
        for j, b in basis:
            term = -avg_dn(j, b) * jump(i, a) - avg_dn(i, a) * jump(j, b) + sig * jump(j, b) * jump(i, a)
            K[gidx(i, a), gidx(j, b)] += sy.integrate(term.subs(x, 1), (y, 0, 1))
    return np.array(K.evalf(), dtype=float), np.array(F.evalf(), dtype=float).ravel()


def unit_pair(p: int = 1, elements: int = 1, rho=1.0):
    return grid_domain(2, 1, degree=p, rho=rho, analysis_elements=lambda i, j: (elements, elements))


class TestQuadrature:
    """Gauss rules on knot spans."""

    def test_weights_sum_to_span_length(self):
        t, w = QuadratureRule(3).on_intervals(np.array([0.0, 0.25, 1.0]))
        np.testing.assert_allclose(w.sum(axis=-1), [0.25, 0.75])
        assert np.all(w > 0)

    def test_exactness(self):
        t, w = QuadratureRule(3).on_intervals(np.array([0.0, 0.5, 1.0]))
        assert np.sum(w * t**5) == pytest.approx(1 / 6, abs=1e-15)


class TestSymbolicOracle:
    """Comparison with a hand-derived symbolic interior penalty system."""

    @pytest.mark.parametrize("eta", [4.0, 10.0])
    def test_matrix_and_load(self, eta):
        g = "x**2 + y"
        Kx, Fx = sipg_oracle(eta, g)
        dom = unit_pair()
        prob = ManufacturedProblem.uniform(polynomial(g), 2)
        sys_ = assemble(dom, prob, eta=eta)
        np.testing.assert_allclose(sys_.K.toarray(), Kx, atol=1e-13)
        np.testing.assert_allclose(sys_.f, Fx, atol=1e-13)


class TestAssembly:
    """Structural properties of the assembled system."""

    def test_default_eta(self):
        assert default_eta(2) == 36.0

    def test_quadrature_too_low(self):
        with pytest.raises(ValueError):
            assemble(unit_pair(2, 2), ManufacturedProblem.uniform(polynomial("x"), 2), q=2)

    def test_problem_size_mismatch(self):
        with pytest.raises(ValueError):
            assemble(unit_pair(2, 2), ManufacturedProblem.uniform(polynomial("x"), 3))

    def test_dofs_disjoint(self):
        sys_ = assemble(unit_pair(2, 3), ManufacturedProblem.uniform(polynomial("x"), 2))
        assert sys_.dofmap.sizes == (25, 25)
        assert sys_.ndofs == 50
        np.testing.assert_array_equal(sys_.dofmap.offsets[:2], [0, 25])

    @pytest.mark.parametrize("mode", ["gap", "overlap", "mixed"])
    def test_symmetric_and_spd(self, mode):
        dom = grid_domain(2, 2, analysis_elements=lambda i, j: (3, 3) if (i + j) % 2 else (4, 4))
        dom = inject_crime(dom, 0, mode, FixedWidth(0.05))
        dom = inject_crime(dom, 3, "gap", FixedWidth(0.03))
        sys_ = assemble(dom, ManufacturedProblem.uniform(polynomial("sin(x)*y"), 4))
        assert symmetry_defect(sys_.K) <= 1e-12
        cholesky(sys_.K)
        lam_min = np.linalg.eigvalsh(sys_.K.toarray())[0]
        assert lam_min > 0

    def test_quadrature_sufficiency(self):
        dom = grid_domain(2, 1, analysis_elements=lambda i, j: (3, 3) if i else (4, 4))
        prob = ManufacturedProblem.uniform(polynomial("x*y"), 2)
        K1 = assemble(dom, prob).K
        K2 = assemble(dom, prob, q=5).K
        assert abs(K1 - K2).max() <= 1e-10 * abs(K1).max()


class TestExactness:
    """Polynomial reproduction and simple error values."""

    def test_single_patch_linear(self):
        dom = single_patch_domain(box_patch(0, 1, 0, 1, degree=2, analysis_elements=(2, 2)))
        prob = ManufacturedProblem.uniform(polynomial("x + y"), 1)
        sys_ = assemble(dom, prob)
        u = solve_direct(sys_)
        assert dg_error(dom, sys_, u, prob)[0] <= 1e-10

    def test_two_patches_quadratic(self):
        dom = grid_domain(2, 1, degree=2, analysis_elements=lambda i, j: (3, 3) if i else (2, 2))
        prob = ManufacturedProblem.uniform(polynomial("x**2 - x*y + 2*y**2 + 1"), 2)
        sys_ = assemble(dom, prob)
        u = solve_direct(sys_)
        assert dg_error(dom, sys_, u, prob)[0] <= 1e-9

    def test_curved_patches_linear(self):
        def deform(P):
            return np.column_stack([P[:, 0] + 0.1 * np.sin(math.pi * P[:, 1]), P[:, 1]])

        dom = grid_domain(2, 1, degree=2, deform=deform, analysis_elements=lambda i, j: (4, 4))
        prob = ManufacturedProblem.uniform(polynomial("2*x - y"), 2)
        sys_ = assemble(dom, prob)
        u = solve_direct(sys_)
        assert dg_error(dom, sys_, u, prob)[0] <= 1e-9

    def test_zero_data(self):
        dom = unit_pair(2, 2)
        prob = ManufacturedProblem.uniform(polynomial("0"), 2)
        sys_ = assemble(dom, prob)
        np.testing.assert_array_equal(solve_direct(sys_), 0.0)

    def test_interpolant_error(self):
        dom = unit_pair(2, 2)
        prob = ManufacturedProblem.uniform(polynomial("x**2 + x*y"), 2)
        sys_ = assemble(dom, prob)
        assert dg_error(dom, sys_, interpolate(dom, prob), prob)[0] <= 1e-9

    @pytest.mark.parametrize("ne", [1, 2])
    def test_boundary_penalty_value(self, ne):
        dom = single_patch_domain(box_patch(0, 1, 0, 1, degree=2, analysis_elements=(ne, ne)))
        prob = ManufacturedProblem.uniform(polynomial("1"), 1)
        sys_ = assemble(dom, prob)
        e, terms = dg_error(dom, sys_, np.zeros(sys_.ndofs), prob)
        h = math.sqrt(2) / ne
        assert e**2 == pytest.approx(4.0 / h, rel=1e-12)
        assert terms["volume"] == pytest.approx(0.0, abs=1e-14)


class TestSolver:
    """Direct solve and residual checks."""

    def test_residual(self):
        dom = inject_crime(unit_pair(2, 4), 0, "gap", FixedWidth(0.02))
        prob = ManufacturedProblem.uniform(polynomial("sin(3*x)*cos(y)"), 2)
        sys_ = assemble(dom, prob)
        u = solve_direct(sys_)
        assert np.linalg.norm(sys_.K @ u - sys_.f) <= 1e-12 * np.linalg.norm(sys_.f)
        assert residual_check(sys_, u) <= 1e-10
        v = u.copy()
        v[7] += 1e-3
        assert residual_check(sys_, v) > 1e-5

    def test_random_spd_against_dense(self):
        rng = np.random.default_rng(0)
        R = sp.random(50, 50, density=0.1, random_state=rng)
        A = sp.csr_matrix(R @ R.T + sp.identity(50))
        b = rng.standard_normal(50)
        x = cholesky(A).solve(b)
        assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b) * 10
        np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-10, atol=1e-12)


class TestConvergence:
    """Rates and penalty robustness on smooth matching problems."""

    def test_rate_two_matching_patches(self):
        sol = polynomial("sin(pi*x)*sin(pi*y) + x + y")
        errs, hs = [], []
        for level in range(4):
            dom = unit_pair(2, 2).refined(level)
            prob = ManufacturedProblem.uniform(sol, 2)
            sys_ = assemble(dom, prob)
            errs.append(dg_error(dom, sys_, solve_direct(sys_), prob)[0])
            hs.append(dom.mesh_size)
        rate = math.log(errs[-2] / errs[-1]) / math.log(hs[-2] / hs[-1])
        assert rate == pytest.approx(2.0, abs=0.1)

    def test_doubling_eta(self):
        sol = polynomial("sin(pi*x)*sin(pi*y) + x + y")
        dom = unit_pair(2, 4)
        prob = ManufacturedProblem.uniform(sol, 2)
        errs = []
        for eta in (default_eta(2), 2 * default_eta(2)):
            sys_ = assemble(dom, prob, eta=eta)
            errs.append(dg_error(dom, sys_, solve_direct(sys_), prob)[0])
        assert errs[1] <= 2 * errs[0]

    def test_error_terms_reported(self):
        dom = inject_crime(unit_pair(2, 4), 0, "overlap", FixedWidth(0.02))
        prob = ManufacturedProblem.uniform(polynomial("x*y"), 2)
        sys_ = assemble(dom, prob)
        e, terms = dg_error(dom, sys_, solve_direct(sys_), prob)
        assert {"volume", "dirichlet", "one_sided", "paired_jump"} <= set(terms)
        total = sum(v for k, v in terms.items() if k != "paired_jump")
        assert e**2 == pytest.approx(total, rel=1e-12)
