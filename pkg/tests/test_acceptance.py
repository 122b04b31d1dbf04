"""Acceptance criteria of the package, one test and one PASS/FAIL line per criterion.

The convergence studies of criteria 1-3 are run through the dual-primal solver
with a direct cross-check, so the same tables also serve criterion 4.
"""

from __future__ import annotations

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from patchcrime.geometry import domain_from_dict
from patchcrime.studies import EXAMPLES, StudyConfig, run_solver_study, run_studies

GEOMETRIES = ("smoke-2patch", "ex1-grid")
TESTS = Path(__file__).parent


def report(capsys, number: int, ok: bool, detail: str) -> None:
    """Print the criterion's verdict line (also when output is captured) and assert it."""
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def fmt(values) -> str:
    return "[" + ", ".join("-" if v is None else f"{v:.3f}" for v in values) + "]"


@pytest.fixture(scope="module")
def rate_tables():
    """Convergence tables keyed by ``(geometry, lambda)`` and ``(geometry, "fixed")``."""
    keys, cfgs = [], []
    for g in GEOMETRIES:
        for lam in (1.0, 2.0, 2.5, 3.0):
            keys.append((g, lam))
            cfgs.append(StudyConfig(geometry=g, degree=2, lam=lam, levels=5, solver="ieti", check_direct=True))
        keys.append((g, "fixed"))
        cfgs.append(StudyConfig(geometry=g, degree=2, fixed_gap=0.004, levels=6, solver="ieti", check_direct=True))
    return dict(zip(keys, run_studies(cfgs)))


@pytest.fixture(scope="module")
def ex1_solver_table():
    return run_solver_study(StudyConfig(geometry="ex1", lam=1.0, levels=5, check_direct=True), ["v"], ["coefficient"])


@pytest.fixture(scope="module")
def ex2_solver_tables():
    cfgs = [StudyConfig(geometry="ex2", lam=2.0, levels=4, check_direct=True, rho=r) for r in (None, "uniform")]
    return run_studies(cfgs, lambda c: run_solver_study(c, ["v"], ["coefficient"]))


class TestAcceptance:
    """Reproduction targets for the crime-aware discretization and its solver."""

    def test_criterion_1_optimal_rates(self, rate_tables, capsys):
        parts, ok = [], True
        for g in GEOMETRIES:
            for lam in (2.5, 3.0):
                t = rate_tables[(g, lam)]
                r = t.final_rate
                good = not t.failures and r is not None and 1.8 <= r <= 2.2
                ok &= good
                parts.append(f"{g} lambda={lam:g} final rate {r:.3f}")
        report(capsys, 1, ok, "; ".join(parts) + " (target [1.8, 2.2])")

    def test_criterion_2_reduced_rates(self, rate_tables, capsys):
        bounds = {1.0: (0.35, 0.65), 2.0: (1.3, 1.7)}
        parts, ok = [], True
        for g in GEOMETRIES:
            for lam, (lo, hi) in bounds.items():
                t = rate_tables[(g, lam)]
                r = t.final_rate
                good = not t.failures and r is not None and lo <= r <= hi
                ok &= good
                parts.append(f"{g} lambda={lam:g} final rate {r:.3f} in [{lo}, {hi}]")
        report(capsys, 2, ok, "; ".join(parts))

    def test_criterion_3_fixed_gap_stagnation(self, rate_tables, capsys):
        parts, ok = [], True
        for g in GEOMETRIES:
            t = rate_tables[(g, "fixed")]
            rates = [r for r in t.rates if r is not None]
            peak = int(np.argmax(rates))
            after = rates[peak:]
            monotone = all(b < a for a, b in zip(after, after[1:]))
            good = not t.failures and len(t.rows) == 6 and monotone and -0.8 <= rates[-1] <= 0.0
            ok &= good
            parts.append(f"{g} rates {fmt(rates)}")
        report(capsys, 3, ok, "fixed d_M=0.004, 6 levels: " + "; ".join(parts) + " (decreasing, last in [-0.8, 0])")

    def test_criterion_4_solver_exactness(self, rate_tables, ex1_solver_table, ex2_solver_tables, capsys):
        values = [r.exactness for t in rate_tables.values() for r in t.rows]
        values += [r.exactness for r in ex1_solver_table.rows]
        values += [r.exactness for t in ex2_solver_tables for r in t.rows]
        worst = max(values)
        ok = all(v is not None and v <= 1e-7 for v in values)
        report(capsys, 4, ok, f"{len(values)} solves, max relative deviation from direct {worst:.2e} (target 1e-7)")

    def test_criterion_5_log_squared_conditioning(self, ex1_solver_table, capsys):
        t = ex1_solver_table
        col = t.column("v", "coefficient")
        kappa = [r.kappa for r in col]
        its = [r.iterations for r in col]
        C, res = t.fit("v", "coefficient")
        monotone = all(b >= a for a, b in zip(kappa, kappa[1:]))
        ok = not t.failures and len(col) == 5 and res < 0.25 and kappa[-1] < 10 and max(its) <= 30 and monotone
        detail = (
            f"21 patches, H/h {[int(r.h_ratio) for r in col]}, kappa {fmt(kappa)}, It {its}, "
            f"fit C={C:.3f} residual {res:.1%} (targets: residual < 25%, kappa < 10, It <= 30)"
        )
        report(capsys, 5, ok, detail)

    def test_criterion_6_coefficient_jump_robustness(self, ex2_solver_tables, capsys):
        jump, uniform = (t.column("v", "coefficient") for t in ex2_solver_tables)
        ok = not any(t.failures for t in ex2_solver_tables) and len(jump) == len(uniform) == 4
        for a, b in zip(jump, uniform):
            ok &= 0.5 <= a.kappa / b.kappa <= 2.0 and abs(a.iterations - b.iterations) <= 5
        detail = (
            f"jump kappa {fmt([r.kappa for r in jump])} It {[r.iterations for r in jump]}; "
            f"rho=1 kappa {fmt([r.kappa for r in uniform])} It {[r.iterations for r in uniform]}"
        )
        report(capsys, 6, ok, detail)

    def test_criterion_7_property_suites(self, capsys):
        selection = [
            "test_splines.py::TestProperties",
            "test_geometry.py::TestInverse",
            "test_geometry.py::TestPairing",
            "test_assembly.py::TestAssembly::test_symmetric_and_spd",
            "test_linalg.py::TestCholesky",
            "test_ieti.py::TestJumpOperator",
            "test_ieti.py::TestOperators",
            "test_studies.py::TestStudies::test_deterministic_csv",
        ]
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *[str(TESTS / s) for s in selection]],
            capture_output=True,
            text=True,
            cwd=TESTS.parent,
        )
        secs = time.perf_counter() - t0
        summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
        ok = proc.returncode == 0 and secs < 30
        report(capsys, 7, ok, f"property suites ({summary}), wall time {secs:.1f} s (target < 30 s)")

    def test_criterion_8_exclusions(self, capsys):
        try:
            domain_from_dict({"dim": 3, "patches": []})
            rejected = False
        except ValueError:
            rejected = True
        ok = rejected and all(not e.endswith("3d") for e in EXAMPLES)
        report(
            capsys,
            8,
            ok,
            "three-dimensional examples are not shipped (3D control nets are rejected); exact table values are "
            "replaced by the trend fits of criteria 5-6 and the exactness oracle of criterion 4",
        )
