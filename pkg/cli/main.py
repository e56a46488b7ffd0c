"""wind-ppd-em command line.

Exit codes: 0 success, 1 IO or input error, 2 non-convergence or numerical
failure (singular covariance, collapsed component), 3 protocol error,
4 dimension error.
"""
import argparse
import json
import sys

from common.errors import (
    AgreementError,
    BroadcastIntegrityError,
    ComponentCollapseError,
    ConditioningError,
    CovarianceError,
    DimensionError,
    HashBudgetError,
    MalformedDataError,
    NonConvergenceError,
    ProtocolError,
    SimulationError,
)
from common.settings import get_settings
from cli import commands


def _add_experiment_flags(parser):
    parser.add_argument("--config", help="JSON experiment spec; flags override its values")
    parser.add_argument("--data", help="wide CSV (timestamp, power_<id>..., forecast_<id>...)")
    parser.add_argument("--topology", help="case-study, ring, random or a topology JSON file")
    parser.add_argument("--mode", choices=["exact-oracle", "full-protocol"])
    parser.add_argument("--bits", type=int, help="hash length L")
    parser.add_argument("--components", type=int, help="mixture components J")
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--cov-floor", type=float, help="eigenvalue floor for every covariance")
    parser.add_argument("--init", choices=["kmeans++", "random-responsibilities"])
    parser.add_argument(
        "--plaintext-first-round", action="store_true", help="send first-round shares unencrypted (desk-scale runs only)"
    )
    parser.add_argument("--key-bits", type=int, help="Paillier modulus size")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--farms", type=int, help="farms of the generated dataset when --data is absent")
    parser.add_argument("--hours", type=int, help="rows of the generated dataset when --data is absent")
    parser.add_argument("--kld-samples", type=int)
    parser.add_argument("--output-dir")


def build_parser():
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="wind-ppd-em",
        description="Privacy-preserving distributed EM for wind power forecast-error distributions",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", help="write a synthetic wide CSV and its manifest")
    gen.add_argument("--preset", default="wind-like")
    gen.add_argument("--farms", type=int, default=9)
    gen.add_argument("--hours", type=int, default=480)
    gen.add_argument("--components", type=int, default=3)
    gen.add_argument("--seed", type=int, default=settings.root_seed)
    gen.add_argument("--name", default="wind")
    gen.add_argument("--output-dir", default=settings.raw_dir)
    gen.set_defaults(handler=commands.cmd_gen_data)

    fit = subparsers.add_parser("fit", help="centralized and distributed fits with comparison metrics")
    _add_experiment_flags(fit)
    fit.add_argument("--select-j", help="BIC over a range of J, e.g. 1..6")
    fit.add_argument("--name", default="fit")
    group = fit.add_mutually_exclusive_group()
    group.add_argument("--centralized-only", action="store_true")
    group.add_argument("--distributed-only", action="store_true")
    fit.set_defaults(handler=commands.cmd_fit)

    conditional = subparsers.add_parser("conditional", help="conditional forecast-error curves per farm")
    conditional.add_argument("--bundle", required=True, help="bundle.json written by fit")
    source = conditional.add_mutually_exclusive_group(required=True)
    source.add_argument("--y0", help="forecast vector as JSON list or one-row CSV")
    source.add_argument("--at-row", type=int, help="take y0 from this row of the fitted dataset")
    conditional.add_argument("--via-network", action="store_true", help="sum the exponents with ppd_sum")
    conditional.add_argument("--name", default="conditional")
    conditional.add_argument("--output-dir")
    conditional.set_defaults(handler=commands.cmd_conditional)

    sweep = subparsers.add_parser("failure-sweep", help="rerun the distributed fit under single-line cuts")
    _add_experiment_flags(sweep)
    sweep.add_argument("--edges", help="cuts to try, e.g. 0-1,2-4; default every line")
    sweep.set_defaults(handler=commands.cmd_failure_sweep)

    bench = subparsers.add_parser("inner-product-bench", help="hashed inner-product error against L")
    _add_experiment_flags(bench)
    bench.add_argument("--log-bits", default="7..15", help="log2 L values, e.g. 7..15")
    bench.add_argument("--seeds", type=int, default=10)
    bench.set_defaults(handler=commands.cmd_inner_product_bench)

    sum_bench = subparsers.add_parser("sum-bench", help="per-round node values of one ppd_sum")
    _add_experiment_flags(sum_bench)
    sum_bench.add_argument("--row", type=int, default=0)
    sum_bench.set_defaults(handler=commands.cmd_sum_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except DimensionError as exc:
        commands.report_error(exc)
        return commands.EXIT_DIMENSION
    except (NonConvergenceError, CovarianceError, ConditioningError, ComponentCollapseError) as exc:
        commands.report_error(exc)
        return commands.EXIT_NON_CONVERGENCE
    except (ProtocolError, SimulationError, AgreementError, HashBudgetError, BroadcastIntegrityError) as exc:
        commands.report_error(exc)
        return commands.EXIT_PROTOCOL
    except (OSError, MalformedDataError, ValueError, json.JSONDecodeError) as exc:
        commands.report_error(exc)
        return commands.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
