"""Discontinuous-Galerkin isogeometric analysis on multipatch domains with
gaps and overlaps, with a direct solver and a dual-primal tearing and
interconnecting (dG-IETI-DP) solver.

Modules
-------
splines    B-spline bases, knot insertion, tensor products
geometry   patch maps, multipatch domains, interface pairing, crime injection
domains    builders for rectangular multipatch grids
assembly   dG system assembly, direct solve and dG-norm errors
linalg     sparse Cholesky wrapper, triangular solves, PCG with Lanczos estimate
ieti       extended space, jump and primal operators, preconditioned dual solve
studies    example registry, convergence and solver studies, CSV/gnuplot output
"""

from .assembly import DGSystem, ExactSolution, ManufacturedProblem, assemble, dg_error, solve_direct
from .geometry import FixedWidth, MultiPatchDomain, PowerWidth, inject_crime, load_domain, save_domain
from .ieti import build_ieti, ieti_solve, solve_ieti
from .splines import KnotVector, TensorProductBasis
from .studies import StudyConfig, registry, run_convergence_study, run_solver_study

__version__ = "0.1.0"

__all__ = [
    "DGSystem",
    "ExactSolution",
    "ManufacturedProblem",
    "assemble",
    "dg_error",
    "solve_direct",
    "FixedWidth",
    "MultiPatchDomain",
    "PowerWidth",
    "inject_crime",
    "load_domain",
    "save_domain",
    "build_ieti",
    "ieti_solve",
    "solve_ieti",
    "KnotVector",
    "TensorProductBasis",
    "StudyConfig",
    "registry",
    "run_convergence_study",
    "run_solver_study",
]
