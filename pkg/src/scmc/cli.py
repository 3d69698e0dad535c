"""Command-line interface for scmc."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .conformal import PredictionRule
from .errors import ScmcError
from .experiment import rows_frame, run_experiment, run_upper_bound, write_rows
from .missingness import DEFAULT_INF_BOUND, DEFAULT_RANK_BOUNDS, estimate_weights
from .movielens import load_movielens
from .version import __version__


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Show debug messages",
    )
    common.add_argument("--seed", type=int, help="Master random seed")
    common.add_argument("--threads", type=int, help="Worker processes for trials")
    common.add_argument("--alpha", type=float, help="Miscoverage level")
    common.add_argument("--k", type=int, help="Test group size K")
    common.add_argument(
        "--rule",
        choices=[rule.value for rule in PredictionRule],
        help="Prediction rule",
    )
    common.add_argument(
        "--methods",
        metavar="LIST",
        help="Comma-separated subset of scmc,unadj,bonf",
    )
    common.add_argument(
        "--progress",
        action="store_true",
        help="Show a progress bar over trials",
    )
    return common


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("-c", "--config", metavar="FILE", help="YAML config file")
    sub.add_argument(
        "-o",
        "--out",
        metavar="PATH",
        help="Output file, .csv or .json (default: CSV on stdout)",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create argument parser for the scmc CLI.

    Returns:
        Configured ArgumentParser instance
    """
    parser = argparse.ArgumentParser(
        prog="scmc",
        description=(
            "Joint conformal confidence regions for groups of missing entries "
            "in a partially observed matrix"
        ),
        epilog=(
            "Example: scmc synthetic -c suite.yaml --k 4 -o coverage.csv\n"
            "Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"scmc {__version__}",
    )
    common = _common_options()
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    synthetic = commands.add_parser(
        "synthetic", parents=[common], help="Coverage and width on synthetic matrices"
    )
    _add_run_options(synthetic)

    movielens = commands.add_parser(
        "movielens", parents=[common], help="Hold-out evaluation on MovieLens ratings"
    )
    _add_run_options(movielens)
    movielens.add_argument(
        "--data", required=True, metavar="PATH", help="MovieLens u.data file"
    )
    movielens.add_argument(
        "--holdout-frac",
        type=float,
        metavar="FRAC",
        help="Share of observed ratings held out for testing (default: 0.2)",
    )

    weights = commands.add_parser(
        "estimate-weights",
        parents=[common],
        help="Estimate sampling weights from a ratings file",
    )
    weights.add_argument("--data", required=True, metavar="PATH", help="Ratings file")
    weights.add_argument(
        "--rank",
        type=int,
        default=DEFAULT_RANK_BOUNDS[0],
        help=f"Rank bound of the logit matrix (default: {DEFAULT_RANK_BOUNDS[0]})",
    )
    weights.add_argument(
        "--nu",
        type=float,
        default=DEFAULT_INF_BOUND,
        help=f"Entrywise logit bound (default: {DEFAULT_INF_BOUND:g})",
    )
    weights.add_argument(
        "--subsample",
        type=int,
        nargs=2,
        metavar=("ROWS", "COLS"),
        help="Keep a random ROWS x COLS submatrix first",
    )
    weights.add_argument(
        "-o", "--out", required=True, metavar="PATH", help="Output weight grid"
    )

    upper = commands.add_parser(
        "upper-bound",
        parents=[common],
        help="Mean largest conformalization weight against 1/n",
    )
    _add_run_options(upper)

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": args.seed,
        "threads": args.threads,
        "alpha": args.alpha,
        "k": args.k,
        "rule": args.rule,
        "methods": args.methods,
    }


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = _overrides(args)
    if args.command == "movielens":
        overrides.update(
            suite="movielens", data_path=args.data, holdout_frac=args.holdout_frac
        )
    elif args.command == "upper-bound":
        overrides.update(w_source="power", wstar_source="w")
    return ExperimentConfig.from_file(args.config, **overrides)


def _emit(rows, args: argparse.Namespace, config: ExperimentConfig) -> None:
    if args.out:
        path = write_rows(rows, args.out, config)
        if args.verbose:
            print(":: Output :::")
            print(path)
    else:
        rows_frame(rows).to_csv(sys.stdout, index=False)


def _estimate_weights(args: argparse.Namespace) -> None:
    matrix = load_movielens(args.data, subsample=args.subsample, seed=args.seed)
    model = estimate_weights(matrix.mask, rank_bound=args.rank, inf_bound=args.nu)
    np.savetxt(args.out, model.w_hat.values, fmt="%.10g")
    if args.verbose:
        print(":: Output :::")
        print(Path(args.out))


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the scmc CLI.

    Args:
        argv: Command-line arguments (default: sys.argv[1:])

    Returns:
        Exit code (0 for success, 2/3/4 for config/data/numerical errors)
    """
    parser = create_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "estimate-weights":
            _estimate_weights(args)
            return 0

        config = _load_config(args)
        if args.verbose:
            print(":: Config :::")
            print(config.dump(), end="")

        if args.command == "upper-bound":
            rows = run_upper_bound(config, progress=args.progress)
        else:
            rows = run_experiment(config, progress=args.progress)
        _emit(rows, args, config)
        return 0

    except ScmcError as e:
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
