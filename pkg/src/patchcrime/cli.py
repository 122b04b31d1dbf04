"""Command-line entry point: ``patchcrime study`` and ``patchcrime solver-study``.

Exit codes: 0 on full success, 2 when some refinement level failed, 1 on
configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .ieti import PRIMAL_CHOICES, SCALINGS
from .studies import ConfigError, StudyConfig, run_convergence_study, run_solver_study, run_studies

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--geometry", required=True, help="registry id (ex1, ex1-grid, ex2, ex3, smoke-2patch) or JSON geometry file")
    p.add_argument("--degree", type=int, default=None, help="spline degree (registry default if omitted)")
    crime = p.add_mutually_exclusive_group(required=True)
    crime.add_argument("--lambda", dest="lam", type=_float_list, help="crime width exponent(s): d_M = h**lambda; comma-separated list runs several studies")
    crime.add_argument("--fixed-gap", type=_float_list, help="fixed crime width(s) d_M")
    p.add_argument("--levels", type=int, default=5, help="number of refinement levels")
    p.add_argument("--start-level", type=int, default=0, help="first refinement level")
    p.add_argument("--eta", type=float, default=None, help="penalty parameter (default 4(p+1)^2)")
    p.add_argument("--quad", type=int, default=None, help="Gauss points per direction (default p+1)")
    p.add_argument("--problem", default=None, help="replace the exact solution: ex1, smoke, linear")
    p.add_argument("--rho", default=None, help="'uniform' or a number replacing the diffusion coefficients")
    p.add_argument("--out", default=None, help="output directory for emitted files")
    p.add_argument("--emit", type=_csv_list, default=["csv"], help="comma-separated formats: csv,gnuplot")
    p.add_argument("--no-timing", action="store_true", help="leave the seconds column empty (byte-identical output)")
    p.add_argument("--check-direct", action="store_true", help="compare iterative solutions with the direct solver")
    p.add_argument("--rtol", type=float, default=1e-10, help="PCG relative residual tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchcrime", description="dG-IgA studies on multipatch domains with gaps and overlaps")
    sub = parser.add_subparsers(dest="command", required=True)
    st = sub.add_parser("study", help="convergence-rate study")
    _common(st)
    st.add_argument("--solver", choices=("direct", "ieti"), default="direct")
    st.add_argument("--primal", choices=PRIMAL_CHOICES, default="v")
    st.add_argument("--scaling", choices=SCALINGS, default="coefficient")
    ss = sub.add_parser("solver-study", help="condition numbers and iteration counts of the dual-primal solver")
    _common(ss)
    ss.add_argument("--primal", type=_csv_list, default=["v"], help="comma-separated primal choices: v,vf")
    ss.add_argument("--scaling", type=_csv_list, default=["coefficient"], help="comma-separated scalings: coefficient,stiffness")
    return parser


def _configs(args: argparse.Namespace, **extra) -> list[StudyConfig]:
    base = dict(
        geometry=args.geometry,
        degree=args.degree,
        levels=args.levels,
        start_level=args.start_level,
        eta=args.eta,
        quad=args.quad,
        out=args.out,
        emit=tuple(args.emit),
        problem=args.problem,
        rho=args.rho,
        check_direct=args.check_direct,
        timing=not args.no_timing,
        rtol=args.rtol,
        **extra,
    )
    if args.lam is not None:
        return [StudyConfig(lam=v, **base) for v in args.lam]
    return [StudyConfig(fixed_gap=v, **base) for v in args.fixed_gap]


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "study":
            cfgs = _configs(args, solver=args.solver, primal=args.primal, scaling=args.scaling)
            for c in cfgs:
                c.validate()
            tables = run_studies(cfgs, run_convergence_study)
            partial = False
            for c, t in zip(cfgs, tables):
                print(f"# {c.stem}")
                print(t.format())
                partial |= bool(t.failures)
        else:
            cfgs = _configs(args, solver="ieti", primal=args.primal[0], scaling=args.scaling[0])
            for c in cfgs:
                c.validate()

            def runner(c: StudyConfig):
                return run_solver_study(c, args.primal, args.scaling)

            tables = run_studies(cfgs, runner)
            partial = False
            for c, t in zip(cfgs, tables):
                print(f"# {c.stem}")
                print(t.format())
                partial |= bool(t.failures)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_PARTIAL if partial else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
