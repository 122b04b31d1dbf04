"""Problem registry, convergence and solver studies, and table emission.

A study refines an example's analysis meshes level by level, injects the
configured segmentation crimes at width ``d = h ** lam`` (or a fixed width)
into the refined geometry, assembles and solves the dG system and records the
dG-norm error, the observed rate ``r = ln(e_i / e_{i+1}) / ln(h_i / h_{i+1})``
and, for the iterative solver, the iteration count and condition estimate.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .assembly import ExactSolution, ManufacturedProblem, assemble, dg_error, solve_direct
from .domains import grid_domain
from .geometry import FixedWidth, MultiPatchDomain, PowerWidth, inject_crime, load_domain
from .ieti import PRIMAL_CHOICES, SCALINGS, build_ieti, fit_log_squared, solve_ieti, worker_count
from .splines import KnotVector

__all__ = [
    "EXAMPLES",
    "LAMBDAS",
    "CSV_COLUMNS",
    "ConfigError",
    "Example",
    "StudyConfig",
    "StudyRow",
    "ResultsTable",
    "SolverRow",
    "SolverTable",
    "registry",
    "solution",
    "build_level",
    "convergence_rates",
    "run_convergence_study",
    "run_solver_study",
    "run_studies",
    "emit",
    "read_csv",
]

EXAMPLES = ("ex1", "ex1-grid", "ex2", "ex3", "smoke-2patch")
LAMBDAS = (1.0, 2.0, 2.5, 3.0, 3.5, 4.0)
CSV_COLUMNS = ("level", "h", "d_M", "dofs", "dg_error", "rate", "iterations", "kappa", "seconds")
SOLUTIONS = ("ex1", "smoke", "linear")


class ConfigError(ValueError):
    """Invalid study configuration."""


# ---------------------------------------------------------------------------
# exact solutions


def _ex1_solution() -> ExactSolution:
    a, b = math.pi / 6.0, math.pi / 3.0

    def u(x, y):
        return np.sin(a * (x + 0.4)) * np.sin(b * (y + 0.3)) + x + y

    def grad(x, y):
        return np.column_stack(
            [
                a * np.cos(a * (x + 0.4)) * np.sin(b * (y + 0.3)) + 1.0,
                b * np.sin(a * (x + 0.4)) * np.cos(b * (y + 0.3)) + 1.0,
            ]
        )

    def lap(x, y):
        return -(a * a + b * b) * np.sin(a * (x + 0.4)) * np.sin(b * (y + 0.3))

    return ExactSolution(u, grad, lap)


def _smoke_solution() -> ExactSolution:
    k = math.pi

    def u(x, y):
        return np.sin(k * x) * np.sin(k * y) + x + y

    def grad(x, y):
        return np.column_stack(
            [k * np.cos(k * x) * np.sin(k * y) + 1.0, k * np.sin(k * x) * np.cos(k * y) + 1.0]
        )

    def lap(x, y):
        return -2.0 * k * k * np.sin(k * x) * np.sin(k * y)

    return ExactSolution(u, grad, lap)


def _linear_solution() -> ExactSolution:
    return ExactSolution(
        lambda x, y: x + y,
        lambda x, y: np.column_stack([np.ones_like(x), np.ones_like(y)]),
        lambda x, y: np.zeros_like(x),
    )


def solution(name: str) -> ExactSolution:
    """Named smooth solution: ``ex1``, ``smoke`` or ``linear``."""
    if name == "ex1":
        return _ex1_solution()
    if name == "smoke":
        return _smoke_solution()
    if name == "linear":
        return _linear_solution()
    raise ConfigError(f"unknown solution {name!r}; expected one of {SOLUTIONS}")


_EX2_K = 3.5 * math.pi
EX2_GAMMA = 14e4 - 8.0


def _ex2_column_solutions() -> tuple[ExactSolution, ExactSolution, ExactSolution]:
    """Piecewise solution of the coefficient-jump example, one closure per column ``x in [c, c+1]``."""
    k = _EX2_K
    g3 = 3.0 * math.pi

    def left_u(x, y):
        return np.exp(-np.sin(g3 * x)) * np.sin(k * y)

    def left_grad(x, y):
        E = np.exp(-np.sin(g3 * x))
        return np.column_stack([-g3 * np.cos(g3 * x) * E * np.sin(k * y), E * k * np.cos(k * y)])

    def left_lap(x, y):
        E = np.exp(-np.sin(g3 * x))
        s, c = np.sin(g3 * x), np.cos(g3 * x)
        return (g3 * g3 * (s + c * c) - k * k) * E * np.sin(k * y)

    G = EX2_GAMMA

    def mid_g(x):
        return (2 * x**2 - 1) + (x - 1) ** 2 * (x - 2) * G

    def mid_u(x, y):
        return mid_g(x) * np.sin(k * y)

    def mid_grad(x, y):
        g1 = 4 * x + G * (2 * (x - 1) * (x - 2) + (x - 1) ** 2)
        return np.column_stack([g1 * np.sin(k * y), mid_g(x) * k * np.cos(k * y)])

    def mid_lap(x, y):
        g2 = 4 + G * (6 * x - 8)
        return (g2 - k * k * mid_g(x)) * np.sin(k * y)

    c = math.pi / 2.0

    def right_u(x, y):
        return 7.0 * np.exp(-np.cos(c * (x + 1))) * np.sin(k * y)

    def right_grad(x, y):
        E = 7.0 * np.exp(-np.cos(c * (x + 1)))
        return np.column_stack([E * c * np.sin(c * (x + 1)) * np.sin(k * y), E * k * np.cos(k * y)])

    def right_lap(x, y):
        E = 7.0 * np.exp(-np.cos(c * (x + 1)))
        d1 = c * np.sin(c * (x + 1))
        d2 = c * c * np.cos(c * (x + 1))
        return (E * (d2 + d1 * d1) - k * k * E) * np.sin(k * y)

    return (
        ExactSolution(left_u, left_grad, left_lap),
        ExactSolution(mid_u, mid_grad, mid_lap),
        ExactSolution(right_u, right_grad, right_lap),
    )


def _ex3_solutions() -> tuple[ExactSolution, ExactSolution]:
    def make(a: float) -> ExactSolution:
        pi = math.pi
        return ExactSolution(
            lambda x, y: np.sin(pi * (a * x + y)),
            lambda x, y: np.column_stack(
                [a * pi * np.cos(pi * (a * x + y)), pi * np.cos(pi * (a * x + y))]
            ),
            lambda x, y: -(pi**2) * (a * a + 1.0) * np.sin(pi * (a * x + y)),
        )

    return make(3.0), make(3.0 * math.pi)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True, eq=False)
class Example:
    """A registered study problem.

    ``domain`` is the matching level-0 decomposition; ``crimes`` lists
    ``(interface index, mode)`` pairs turned into gaps/overlaps at every level.
    """

    name: str
    domain: MultiPatchDomain
    problem: ManufacturedProblem
    crimes: tuple[tuple[int, str], ...]
    description: str = ""

    @property
    def degree(self) -> int:
        return self.domain.degree


def _alternating(domain: MultiPatchDomain) -> tuple[tuple[int, str], ...]:
    return tuple((k, "gap" if k % 2 == 0 else "overlap") for k in range(len(domain.interfaces)))


#: side length of the patches of the Example-1 style decompositions
EX1_PATCH_SIZE = 4.0


def _ex1_deform(P: np.ndarray) -> np.ndarray:
    """Smooth deformation bending the interfaces of the 3 x 7 decomposition."""
    s = EX1_PATCH_SIZE
    x, y = P[:, 0], P[:, 1]
    return np.column_stack(
        [x + 0.3 * s * np.sin(math.pi * y / (3.5 * s)), y + 0.2 * s * np.sin(math.pi * x / (1.5 * s))]
    )


def _ex3_deform(P: np.ndarray) -> np.ndarray:
    """Curves the patch interiors while keeping the vertical interfaces straight."""
    x, y = P[:, 0], P[:, 1]
    return np.column_stack(
        [x + 0.1 * np.sin(math.pi * x) * np.sin(math.pi * y), y + 0.1 * np.sin(0.5 * math.pi * x) * np.sin(math.pi * y)]
    )


def registry(
    name: str,
    degree: int | None = None,
    problem: str | None = None,
    rho: str | float | None = None,
) -> Example:
    """Look up a registered example.

    Parameters
    ----------
    name:
        One of ``ex1`` (21 curved patches, non-matching meshes), ``ex1-grid``
        (3 x 3 grid variant), ``ex2`` (coefficient jumps, ``p = 3``), ``ex3``
        (4-patch strip with a mixed gap/overlap interface), ``smoke-2patch``.
    degree:
        Spline degree (defaults to 3 for ``ex2`` and 2 otherwise).
    problem:
        Replace the exact solution by a named one (``ex1``, ``smoke``,
        ``linear``) on every patch.
    rho:
        ``"uniform"`` (or a number) replaces the diffusion coefficients.
    """
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; expected one of {EXAMPLES}")
    s = EX1_PATCH_SIZE
    if name == "smoke-2patch":
        p = 2 if degree is None else degree
        dom = grid_domain(2, 1, degree=p, analysis_elements=lambda i, j: (4, 4))
        prob = ManufacturedProblem.uniform(_smoke_solution(), 2, "smoke")
        ex = Example(name, dom, prob, ((0, "gap"),), "two unit squares")
    elif name == "ex1-grid":
        p = 2 if degree is None else degree
        dom = grid_domain(
            3, 3, xs=s * np.arange(4.0), ys=s * np.arange(4.0), degree=p, analysis_elements=lambda i, j: (4, 4)
        )
        prob = ManufacturedProblem.uniform(_ex1_solution(), 9, "ex1")
        ex = Example(name, dom, prob, _alternating(dom), "3 x 3 grid of square patches")
    elif name == "ex1":
        p = 2 if degree is None else degree
        dom = grid_domain(
            3,
            7,
            xs=s * np.arange(4.0),
            ys=s * np.arange(8.0),
            degree=p,
            analysis_elements=lambda i, j: (4, 4) if (i + j) % 2 == 0 else (5, 5),
            deform=_ex1_deform,
        )
        prob = ManufacturedProblem.uniform(_ex1_solution(), 21, "ex1")
        ex = Example(name, dom, prob, _alternating(dom), "21 curved patches, non-matching meshes")
    elif name == "ex2":
        p = 3 if degree is None else degree
        rhos = [1.0, 0.75 * math.pi, 1e4] * 3
        dom = grid_domain(3, 3, degree=p, rho=rhos, analysis_elements=lambda i, j: (8, 8))
        cols = _ex2_column_solutions()
        prob = ManufacturedProblem(tuple(cols[i % 3] for i in range(9)), "ex2")
        ex = Example(name, dom, prob, _alternating(dom), "3 x 3 unit squares, coefficient jumps per column")
    else:  # ex3
        p = 2 if degree is None else degree
        ys_geo = KnotVector(p, np.concatenate([np.zeros(p + 1), [0.5], np.ones(p + 1)]))
        xs_geo = KnotVector.uniform(p, 1)
        dom = grid_domain(
            4,
            1,
            xs=[-2.0, -1.0, 0.0, 1.0, 2.0],
            ys=[0.0, 1.0],
            degree=p,
            rho=[3 * math.pi, 3 * math.pi, 3.0, 3.0],
            analysis_elements=lambda i, j: (4, 4) if i % 2 == 0 else (6, 6),
            deform=_ex3_deform,
            geo_knots=lambda i, j: (xs_geo, ys_geo),
        )
        left, right = _ex3_solutions()
        prob = ManufacturedProblem((left, left, right, right), "ex3")
        ex = Example(name, dom, prob, ((1, "mixed"),), "4-patch strip, mixed gap/overlap at x = 0")
    if problem is not None:
        sol = solution(problem)
        ex = replace(ex, problem=ManufacturedProblem.uniform(sol, ex.domain.num_patches, problem))
    if rho is not None:
        value = 1.0 if rho == "uniform" else float(rho)
        if not value > 0:
            raise ConfigError("rho must be positive")
        ex = replace(ex, domain=ex.domain.with_rho(value))
    return ex


def _example_from_file(path: str, degree: int | None, problem: str | None, rho) -> Example:
    try:
        dom = load_domain(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"geometry file not found: {path}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid geometry file {path}: {exc}") from exc
    if degree is not None and degree != dom.degree:
        raise ConfigError(f"geometry file has degree {dom.degree}, but degree {degree} was requested")
    sol = solution(problem or "ex1")
    prob = ManufacturedProblem.uniform(sol, dom.num_patches, problem or "ex1")
    crimes = tuple((k, m) for k, m in _alternating(dom) if dom.interfaces[k].kind == "matching")
    ex = Example(Path(path).stem, dom, prob, crimes, f"geometry file {path}")
    if rho is not None:
        ex = replace(ex, domain=dom.with_rho(1.0 if rho == "uniform" else float(rho)))
    return ex


# ---------------------------------------------------------------------------
# configuration and tables


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of one convergence or solver study.

    Exactly one of ``lam`` (crime width ``h ** lam``) and ``fixed_gap`` must be
    given.  ``timing=False`` leaves the wall-time column empty so that identical
    configurations produce byte-identical CSV files.
    """

    geometry: str = "smoke-2patch"
    degree: int | None = None
    lam: float | None = None
    fixed_gap: float | None = None
    levels: int = 5
    start_level: int = 0
    eta: float | None = None
    solver: str = "direct"
    primal: str = "v"
    scaling: str = "coefficient"
    quad: int | None = None
    out: str | None = None
    emit: tuple[str, ...] = ("csv",)
    problem: str | None = None
    rho: str | None = None
    check_direct: bool = False
    timing: bool = True
    rtol: float = 1e-10

    def validate(self) -> None:
        if self.levels < 2:
            raise ConfigError("at least 2 refinement levels are needed to compute rates")
        if self.start_level < 0:
            raise ConfigError("start level must be non-negative")
        if (self.lam is None) == (self.fixed_gap is None):
            raise ConfigError("give exactly one of lambda and fixed gap width")
        if self.lam is not None and float(self.lam) not in LAMBDAS:
            raise ConfigError(f"lambda must be one of {LAMBDAS}, got {self.lam}")
        if self.fixed_gap is not None and not self.fixed_gap > 0:
            raise ConfigError("fixed gap width must be positive")
        if self.solver not in ("direct", "ieti"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.primal not in PRIMAL_CHOICES:
            raise ConfigError(f"unknown primal choice {self.primal!r}")
        if self.scaling not in SCALINGS:
            raise ConfigError(f"unknown scaling {self.scaling!r}")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.degree is not None and self.degree < 1:
            raise ConfigError("degree must be at least 1")
        if self.quad is not None and self.quad < 1:
            raise ConfigError("quadrature order must be positive")
        if self.problem is not None and self.problem not in SOLUTIONS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {SOLUTIONS}")
        for fmt in self.emit:
            if fmt not in ("csv", "gnuplot"):
                raise ConfigError(f"unknown output format {fmt!r}")

    def example(self) -> Example:
        if self.geometry in EXAMPLES:
            return registry(self.geometry, self.degree, self.problem, self.rho)
        return _example_from_file(self.geometry, self.degree, self.problem, self.rho)

    def width_rule(self) -> FixedWidth | PowerWidth:
        return FixedWidth(self.fixed_gap) if self.fixed_gap is not None else PowerWidth(float(self.lam))

    @property
    def stem(self) -> str:
        name = Path(self.geometry).stem if self.geometry not in EXAMPLES else self.geometry
        crime = f"lam{self.lam:g}" if self.lam is not None else f"fixed{self.fixed_gap:g}"
        return f"{name}_{crime}_{self.solver}"


@dataclass
class StudyRow:
    """One refinement level of a convergence study."""

    level: int
    h: float
    d_M: float = math.nan
    dofs: int = 0
    dg_error: float = math.nan
    rate: float | None = None
    iterations: int | None = None
    kappa: float | None = None
    seconds: float | None = None
    h_ratio: float = math.nan
    exactness: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def convergence_rates(h: Sequence[float], e: Sequence[float]) -> list[float | None]:
    """``r_i = ln(e_{i-1} / e_i) / ln(h_{i-1} / h_i)``; ``None`` for the first entry or missing data."""
    out: list[float | None] = [None]
    for i in range(1, len(h)):
        a, b = e[i - 1], e[i]
        if not (a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)) or h[i - 1] == h[i]:
            out.append(None)
        else:
            out.append(math.log(a / b) / math.log(h[i - 1] / h[i]))
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


@dataclass
class ResultsTable:
    """Rows of a convergence study plus summary data."""

    config: StudyConfig
    rows: list[StudyRow]
    degree: int
    width_slope: float | None = None

    @property
    def failures(self) -> list[StudyRow]:
        return [r for r in self.rows if not r.ok]

    @property
    def rates(self) -> list[float | None]:
        return [r.rate for r in self.rows]

    @property
    def final_rate(self) -> float | None:
        return self.rows[-1].rate if self.rows else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    _fmt(r.level),
                    _fmt(r.h),
                    _fmt(r.d_M),
                    _fmt(r.dofs),
                    _fmt(r.dg_error),
                    _fmt(r.rate),
                    _fmt(r.iterations),
                    _fmt(r.kappa),
                    _fmt(r.seconds),
                ]
            )
        return buf.getvalue()

    def format(self) -> str:
        """Human-readable table."""
        lines = [f"{'level':>5} {'h':>10} {'d_M':>10} {'dofs':>8} {'dG error':>12} {'rate':>7} {'It':>4} {'kappa':>8}"]
        for r in self.rows:
            if not r.ok:
                lines.append(f"{r.level:>5} {r.h:>10.4g}  FAILED: {r.error}")
                continue
            rate = f"{r.rate:7.3f}" if r.rate is not None else " " * 7
            it = f"{r.iterations:4d}" if r.iterations is not None else " " * 4
            kap = f"{r.kappa:8.3f}" if r.kappa is not None else " " * 8
            lines.append(f"{r.level:>5} {r.h:>10.4g} {r.d_M:>10.4g} {r.dofs:>8} {r.dg_error:>12.5e} {rate} {it} {kap}")
        if self.width_slope is not None:
            lines.append(f"measured width slope log d_M / log h: {self.width_slope:.4f}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# studies


def h_ratio(domain: MultiPatchDomain) -> float:
    """``H/h``: elements per side of the coarsest patch mesh."""
    return float(min(max(p.elements_per_direction()) for p in domain.patches))


def build_level(example: Example, level: int, width_rule: FixedWidth | PowerWidth) -> MultiPatchDomain:
    """Refine the example ``level`` times and inject its crimes at the rule's width."""
    dom = example.domain.refined(level)
    h = dom.mesh_size
    for k, mode in example.crimes:
        dom = inject_crime(dom, k, mode, width_rule, h=h)
    return dom


def run_convergence_study(cfg: StudyConfig) -> ResultsTable:
    """Error and rate table over ``cfg.levels`` refinement levels.

    A failing level (geometry, factorization or solver error) is recorded with
    its message and the remaining levels still run.
    """
    cfg.validate()
    example = cfg.example()
    rule = cfg.width_rule()
    rows: list[StudyRow] = []
    for level in range(cfg.start_level, cfg.start_level + cfg.levels):
        t0 = time.perf_counter()
        h = example.domain.refined(level).mesh_size
        row = StudyRow(level, h)
        try:
            dom = build_level(example, level, rule)
            row.d_M = dom.d_max
            row.h_ratio = h_ratio(dom)
            sys_ = assemble(dom, example.problem, q=cfg.quad, eta=cfg.eta)
            row.dofs = sys_.ndofs
            if cfg.solver == "direct":
                u = solve_direct(sys_)
            else:
                ops = build_ieti(sys_, cfg.primal, cfg.scaling)
                u, stats = solve_ieti(ops, rtol=cfg.rtol)
                row.iterations, row.kappa = stats.iterations, stats.kappa
                if cfg.check_direct:
                    ud = solve_direct(sys_)
                    row.exactness = float(np.abs(u - ud).max() / max(np.abs(ud).max(), 1e-300))
            row.dg_error, _ = dg_error(dom, sys_, u, example.problem)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        if cfg.timing:
            row.seconds = time.perf_counter() - t0
        rows.append(row)
    rates = convergence_rates([r.h for r in rows], [r.dg_error if r.ok else math.nan for r in rows])
    for r, rate in zip(rows, rates):
        r.rate = rate
    slope = None
    if cfg.lam is not None:
        good = [r for r in rows if r.ok and r.d_M > 0]
        if len(good) >= 2:
            slope = float(np.polyfit(np.log([r.h for r in good]), np.log([r.d_M for r in good]), 1)[0])
    table = ResultsTable(cfg, rows, example.degree, slope)
    if cfg.out is not None:
        emit(table, cfg.emit, cfg.out)
    return table


@dataclass
class SolverRow:
    """One solver run of a solver study."""

    level: int
    dofs: int
    h_ratio: float
    primal: str
    scaling: str
    kappa: float
    iterations: int
    seconds: float | None = None
    exactness: float | None = None


@dataclass
class SolverTable:
    """Condition numbers and iteration counts per level, primal choice and scaling."""

    config: StudyConfig
    rows: list[SolverRow]
    primal_choices: tuple[str, ...]
    scalings: tuple[str, ...]
    failures: list[tuple[int, str]] = field(default_factory=list)

    def column(self, primal: str, scaling: str) -> list[SolverRow]:
        return sorted(
            (r for r in self.rows if r.primal == primal and r.scaling == scaling), key=lambda r: r.h_ratio
        )

    def fit(self, primal: str, scaling: str) -> tuple[float, float]:
        """``(C, relative residual)`` of ``kappa ~ C (1 + log(H/h))^2``."""
        col = self.column(primal, scaling)
        return fit_log_squared([r.h_ratio for r in col], [r.kappa for r in col])

    @property
    def csv_columns(self) -> list[str]:
        cols = ["level", "dofs", "H/h"]
        for pc in self.primal_choices:
            for sc in self.scalings:
                cols += [f"kappa_{pc}_{sc}", f"it_{pc}_{sc}"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_columns)
        levels = sorted({r.level for r in self.rows})
        for lv in levels:
            sel = {(r.primal, r.scaling): r for r in self.rows if r.level == lv}
            first = next(iter(sel.values()))
            line = [_fmt(lv), _fmt(first.dofs), _fmt(first.h_ratio)]
            for pc in self.primal_choices:
                for sc in self.scalings:
                    r = sel.get((pc, sc))
                    line += [_fmt(r.kappa if r else None), _fmt(r.iterations if r else None)]
            w.writerow(line)
        return buf.getvalue()

    def format(self) -> str:
        head = f"{'dofs':>8} {'H/h':>5}" + "".join(f" {pc + '/' + sc[:5]:>16}" for pc in self.primal_choices for sc in self.scalings)
        lines = [head]
        for lv in sorted({r.level for r in self.rows}):
            sel = {(r.primal, r.scaling): r for r in self.rows if r.level == lv}
            first = next(iter(sel.values()))
            line = f"{first.dofs:>8} {first.h_ratio:>5g}"
            for pc in self.primal_choices:
                for sc in self.scalings:
                    r = sel.get((pc, sc))
                    line += f" {r.kappa:>9.3f} {r.iterations:>5d}" + " " if r else " " * 17
            lines.append(line)
        for lv, msg in self.failures:
            lines.append(f"level {lv} FAILED: {msg}")
        return "\n".join(lines)


def run_solver_study(
    cfg: StudyConfig,
    primal_choices: Sequence[str] | None = None,
    scalings: Sequence[str] | None = None,
) -> SolverTable:
    """Condition estimates and iteration counts of the dual-primal solver per level."""
    cfg = replace(cfg, solver="ieti")
    cfg.validate()
    pcs = tuple(primal_choices or (cfg.primal,))
    scs = tuple(scalings or (cfg.scaling,))
    for pc in pcs:
        if pc not in PRIMAL_CHOICES:
            raise ConfigError(f"unknown primal choice {pc!r}")
    for sc in scs:
        if sc not in SCALINGS:
            raise ConfigError(f"unknown scaling {sc!r}")
    example = cfg.example()
    rule = cfg.width_rule()
    table = SolverTable(cfg, [], pcs, scs)
    for level in range(cfg.start_level, cfg.start_level + cfg.levels):
        try:
            dom = build_level(example, level, rule)
            sys_ = assemble(dom, example.problem, q=cfg.quad, eta=cfg.eta)
            ud = solve_direct(sys_) if cfg.check_direct else None
            for pc in pcs:
                t0 = time.perf_counter()
                ops = build_ieti(sys_, pc, scs[0])
                for sc in scs:
                    u, st = solve_ieti(ops, scaling=sc, rtol=cfg.rtol)
                    ex = None
                    if ud is not None:
                        ex = float(np.abs(u - ud).max() / max(np.abs(ud).max(), 1e-300))
                    secs = time.perf_counter() - t0 if cfg.timing else None
                    table.rows.append(
                        SolverRow(level, sys_.ndofs, h_ratio(dom), pc, sc, st.kappa, st.iterations, secs, ex)
                    )
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            table.failures.append((level, f"{type(exc).__name__}: {exc}"))
    if cfg.out is not None:
        emit(table, cfg.emit, cfg.out)
    return table


def run_studies(
    cfgs: Sequence[StudyConfig], runner: Callable[[StudyConfig], ResultsTable] = run_convergence_study
) -> list:
    """Run independent study configurations concurrently (``PATCHCRIME_THREADS`` caps the pool)."""
    nw = min(worker_count(), len(cfgs))
    if nw <= 1:
        return [runner(c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(runner, cfgs))


# ---------------------------------------------------------------------------
# output


def _gnuplot_convergence(table: ResultsTable, csv_name: str) -> str:
    good = [r for r in table.rows if r.ok]
    if not good:
        raise ValueError("no successful level to plot")
    h0, e0 = good[-1].h, good[-1].dg_error
    slopes = sorted({0.5, 1.5, 2.0, float(table.degree)})
    stem = Path(csv_name).stem
    lines = [
        "# log-log plot of the dG error against the mesh size",
        "set terminal svg size 640,480",
        f"set output '{stem}.svg'",
        "set datafile separator ','",
        "set logscale xy",
        "set key left top",
        "set xlabel 'h'",
        "set ylabel 'dG error'",
        f"set title '{stem}'",
        f"h0 = {h0!r}",
        f"e0 = {e0!r}",
    ]
    refs = ", \\\n     ".join(f"e0*(x/h0)**{s:g} dashtype 2 title 'slope {s:g}'" for s in slopes)
    lines.append(f"plot '{csv_name}' skip 1 using 2:5 with linespoints pt 7 title 'dG error', \\\n     {refs}")
    return "\n".join(lines) + "\n"


def _gnuplot_solver(table: SolverTable, csv_name: str) -> str:
    stem = Path(csv_name).stem
    cols = table.csv_columns
    lines = [
        "# condition estimate against H/h",
        "set terminal svg size 640,480",
        f"set output '{stem}.svg'",
        "set datafile separator ','",
        "set logscale x",
        "set key left top",
        "set xlabel 'H/h'",
        "set ylabel 'kappa'",
        f"set title '{stem}'",
    ]
    plots = []
    for j, name in enumerate(cols):
        if name.startswith("kappa_"):
            plots.append(f"'{csv_name}' skip 1 using 3:{j + 1} with linespoints title '{name}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def emit(table: ResultsTable | SolverTable, formats: Sequence[str], out_dir: str | Path, stem: str | None = None) -> list[Path]:
    """Write the table as CSV and/or a gnuplot script; returns the written paths."""
    if not table.rows:
        raise ValueError("cannot emit an empty table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "_solver" if isinstance(table, SolverTable) else ""
    stem = stem or table.config.stem + suffix
    csv_path = out / f"{stem}.csv"
    written = []
    for fmt in formats:
        if fmt == "csv":
            csv_path.write_text(table.to_csv())
            written.append(csv_path)
        elif fmt == "gnuplot":
            gp = out / f"{stem}.gp"
            if isinstance(table, SolverTable):
                gp.write_text(_gnuplot_solver(table, csv_path.name))
            else:
                gp.write_text(_gnuplot_convergence(table, csv_path.name))
            written.append(gp)
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    return written


def read_csv(text: str) -> list[dict[str, float | int | None]]:
    """Parse a convergence CSV back into typed records (empty fields become ``None``)."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row: dict[str, float | int | None] = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None
            elif k in ("level", "dofs", "iterations"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out
