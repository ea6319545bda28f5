"""Command-line interface.

    abm-eql simulate {bdm|sir} --config FILE [--replicates N] [--seed S] [--correlation] --out DIR
    abm-eql learn --data CSV --library SPEC --solver {lstsq,lasso,greedy} [...] --out DIR
    abm-eql select --data CSV [--corr CSV] [--splits 100] [--seed S] --out DIR
    abm-eql casestudy {tutorial|cs1|cs2|cs3a|cs3b|cs4|cs5} --out DIR [--scale {paper|desk}]

Exit codes: 0 success, 1 unexpected failure, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from .config import load_config
from .eql_core import SolverSpec
from .errors import ConfigError, NumericalError
from .harness import CASE_STUDIES, case_study_spec, learn_to_dir, run_case_study, select_to_dir, simulate_to_dir
from .lattice_abm import Trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_SOLVERS = {"lstsq": "least_squares", "lasso": "lasso", "greedy": "greedy"}


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as ConfigError instead of exiting."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="abm-eql",
        description="Lattice ABM simulation and equation learning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--verbose", "-v", action="count", default=0, help="More logging (-v info, -vv debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="Run an ABM ensemble and write its mean trace")
    sim.add_argument("model", choices=["bdm", "sir"])
    sim.add_argument("--config", required=True, help="key = value config file")
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--seed", type=int, default=None, help="Master seed (default: seed from the config)")
    sim.add_argument("--correlation", action="store_true", help="Record the occupancy correlation F (BDM)")
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--out", required=True)

    learn = sub.add_parser("learn", help="Learn a sparse ODE from a trace CSV")
    learn.add_argument("--data", required=True)
    learn.add_argument("--library", default="poly4", help="Preset (poly4, sir, logistic, modified_logistic) "
                                                          "or comma-separated terms such as 'C,C^2'")
    learn.add_argument("--solver", choices=sorted(_SOLVERS), default="greedy")
    learn.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="Fixed Lasso lambda (default: grid search per split)")
    learn.add_argument("--tol", type=float, default=None, help="Greedy tolerance (default 1e-4)")
    learn.add_argument("--grid-min", type=float, default=1e-5)
    learn.add_argument("--grid-max", type=float, default=1e-3)
    learn.add_argument("--grid-count", type=int, default=100)
    learn.add_argument("--debias", action="store_true", help="Refit the Lasso support by least squares")
    learn.add_argument("--prune-pct", type=float, default=5.0, help="Pruning threshold in percent")
    learn.add_argument("--splits", type=int, default=10, help="Train/test splits; 0 fits once without pruning")
    learn.add_argument("--species", default=None, help="Comma-separated species to learn")
    learn.add_argument("--seed", type=int, default=0)
    learn.add_argument("--out", required=True)

    select = sub.add_parser("select", help="Vote between mean-field and modified logistic libraries")
    select.add_argument("--data", required=True)
    select.add_argument("--corr", default=None, help="Trace CSV holding F (default: the F column of --data)")
    select.add_argument("--splits", type=int, default=100)
    select.add_argument("--seed", type=int, default=0)
    select.add_argument("--out", required=True)

    case = sub.add_parser("casestudy", help="Run a case study end to end")
    case.add_argument("study", choices=CASE_STUDIES)
    case.add_argument("--scale", choices=["paper", "desk"], default="paper")
    case.add_argument("--seed", type=int, default=0)
    case.add_argument("--workers", type=int, default=None)
    case.add_argument("--out", required=True)
    return parser


def solver_spec_from_args(args) -> SolverSpec:
    kind = _SOLVERS[args.solver]
    splits = max(args.splits, 1)
    threshold = args.prune_pct / 100.0
    if kind == "greedy":
        return SolverSpec(kind=kind, tol=1e-4 if args.tol is None else args.tol,
                          prune_threshold=threshold, n_splits=splits)
    if kind == "lasso":
        if args.grid_count < 1 or args.grid_min <= 0 or args.grid_max < args.grid_min:
            raise ConfigError("grid needs count >= 1 and 0 < grid-min <= grid-max")
        grid = (0.0,) + tuple(float(v) for v in np.logspace(np.log10(args.grid_min), np.log10(args.grid_max),
                                                            args.grid_count))
        return SolverSpec(kind=kind, lam=args.lam, grid=grid, prune_threshold=threshold, n_splits=splits,
                          debias=args.debias)
    return SolverSpec(kind=kind, prune_threshold=threshold, n_splits=splits)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _run(args) -> dict:
    if args.command == "simulate":
        config = load_config(args.config, args.model)
        seed = config.seed if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        return simulate_to_dir(config.with_seed(seed), args.replicates, seed, args.out,
                               correlation=args.correlation, workers=args.workers)
    if args.command == "learn":
        if args.splits < 0:
            raise ConfigError("--splits must be >= 0")
        spec = solver_spec_from_args(args)
        species = [s.strip() for s in args.species.split(",")] if args.species else None
        return learn_to_dir(Trace.from_csv(args.data), args.library, spec, args.seed, args.out,
                            species=species, prune=args.splits > 0)
    if args.command == "select":
        f_trace = Trace.from_csv(args.corr) if args.corr else None
        return select_to_dir(Trace.from_csv(args.data), f_trace, args.splits, args.seed, args.out)
    spec = case_study_spec(args.study, args.out, scale=args.scale, seed=args.seed, workers=args.workers)
    report = run_case_study(spec)
    return {"study": report["study"], "table": str(spec.out_dir / report["table"]), "rows": len(report["rows"])}


def main(argv: Optional[List[str]] = None) -> int:
    verbose = 0
    try:
        args = build_parser().parse_args(argv)
        verbose = args.verbose
        _configure_logging(verbose)
        summary = _run(args)
        print(json.dumps(summary, indent=2, default=str))
        return EXIT_OK
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"Fatal error: {e}", file=sys.stderr)
        if verbose:
            import traceback
            traceback.print_exc()
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
