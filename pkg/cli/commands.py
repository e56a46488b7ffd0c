"""Subcommand handlers; each returns a process exit code."""
import json
import os
import sys

import numpy as np
import pandas as pd

from common.errors import DimensionError
from gmm.mixture import GmmParams
from processors.conditional_report import ConditionalReporter
from processors.experiment_runner import ExperimentRunner, ExperimentSpec
from protocols.topology import Topology
from sources.synthetic_source import SyntheticWindSource

EXIT_OK = 0
EXIT_IO = 1
EXIT_NON_CONVERGENCE = 2
EXIT_PROTOCOL = 3
EXIT_DIMENSION = 4

SPEC_FLAGS = {
    "data": "data_path",
    "topology": "topology",
    "mode": "mode",
    "bits": "n_bits",
    "key_bits": "key_bits",
    "components": "n_components",
    "max_iter": "max_iter",
    "tol": "tol",
    "cov_floor": "cov_floor",
    "init": "init",
    "seed": "seed",
    "farms": "n_farms",
    "hours": "n_rows",
    "output_dir": "output_dir",
    "kld_samples": "kld_samples",
}


def parse_range(text):
    """'1..6' or '1,2,5' -> list of ints"""
    if ".." in text:
        low, high = text.split("..", 1)
        return list(range(int(low), int(high) + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def parse_edges(text):
    """'0-1,2-4' -> [(0, 1), (2, 4)]"""
    edges = []
    for part in text.split(","):
        if part.strip():
            a, b = part.split("-")
            edges.append((int(a), int(b)))
    return edges


def spec_from_args(args):
    overrides = {field: getattr(args, flag, None) for flag, field in SPEC_FLAGS.items()}
    if getattr(args, "plaintext_first_round", False):
        overrides["encrypt_first_round"] = False
    return ExperimentSpec.from_json(getattr(args, "config", None), **overrides)


def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))


def cmd_gen_data(args):
    source = SyntheticWindSource(args.output_dir)
    result = source.run(
        n_farms=args.farms, n_rows=args.hours, preset=args.preset, seed=args.seed,
        n_components=args.components, name=args.name,
    )
    _emit({"csv": result["filepath"], "manifest": result["manifest"], "rows": result["table"].n_rows})
    return EXIT_OK


def cmd_fit(args):
    spec = spec_from_args(args)
    runner = ExperimentRunner(spec.output_dir)
    summary = {}
    if args.select_j:
        table = runner.select_components(spec, parse_range(args.select_j))
        path = os.path.join(runner.output_dir, "bic.csv")
        table.to_csv(path, index=False)
        summary["bic"] = table.to_dict(orient="records")
        summary["bic_path"] = path
    result = runner.fit(
        spec, name=args.name, centralized=not args.distributed_only, distributed=not args.centralized_only
    )
    summary.update({key: result[key] for key in ("converged", "comparison", "bundle_dir") if key in result})
    if "distributed" in result:
        trace = result["distributed"]["trace"]
        summary["iterations"] = trace["iterations"]
        summary["messages"] = trace["messages"][-1] if trace["messages"] else 0
        summary["inner_product_mean_relative_error"] = trace["mean_inner_product_error"]
        if "privacy" in result["distributed"]:
            summary["privacy_clean"] = result["distributed"]["privacy"]["clean"]
    _emit(summary)
    return EXIT_OK if result["converged"] else EXIT_NON_CONVERGENCE


def _read_forecast(path):
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as handle:
            return np.asarray(json.load(handle), dtype=float)
    return pd.read_csv(path, header=None).to_numpy(dtype=float).reshape(-1)


def cmd_conditional(args):
    with open(args.bundle, "r", encoding="utf-8") as handle:
        bundle = json.load(handle)
    if "centralized" not in bundle or "distributed" not in bundle:
        raise ValueError(f"{args.bundle} needs both a centralized and a distributed fit")
    benchmark = GmmParams.from_dict(bundle["centralized"]["params"])
    node_params = [GmmParams.from_dict(p) for p in bundle["distributed"]["params"]]
    if args.y0:
        y0 = _read_forecast(args.y0)
    else:
        spec = ExperimentSpec(**bundle["spec"])
        table = ExperimentRunner(spec.output_dir).load_table(spec)
        if not 0 <= args.at_row < table.n_rows:
            raise DimensionError(f"Row {args.at_row} outside 0..{table.n_rows - 1}")
        y0 = table.forecast[args.at_row]
    if y0.shape[0] != benchmark.n_farms:
        raise DimensionError(f"Forecast vector has length {y0.shape[0]}, expected {benchmark.n_farms}")
    topology = None
    if args.via_network:
        topology = Topology.from_dict(bundle["distributed"]["topology"])
    reporter = ConditionalReporter(args.output_dir or os.path.dirname(os.path.abspath(args.bundle)))
    result = reporter.run(benchmark, node_params, y0, name=args.name, topology=topology)
    _emit({"curves": result["curves"], "rse": result["rse"], "max_cdf_rse": float(result["rse_table"]["cdf_rse"].max())})
    return EXIT_OK


def cmd_failure_sweep(args):
    if args.mode is None:
        args.mode = "full-protocol"
    spec = spec_from_args(args)
    runner = ExperimentRunner(spec.output_dir)
    edges = parse_edges(args.edges) if args.edges is not None else None
    report, path = runner.failure_sweep(spec, edges)
    _emit({"report": path, "rows": report.to_dict(orient="records")})
    return EXIT_OK


def cmd_inner_product_bench(args):
    spec = spec_from_args(args)
    runner = ExperimentRunner(spec.output_dir)
    bits = [2 ** k for k in parse_range(args.log_bits)]
    frame = runner.inner_product_bench(spec, bits, args.seeds)
    path = os.path.join(runner.output_dir, "inner_product_bench.csv")
    frame.to_csv(path, index=False)
    _emit({"bench": path, "mean_by_bits": frame.groupby("n_bits")["mean_relative_error"].mean().to_dict()})
    return EXIT_OK


def cmd_sum_bench(args):
    spec = spec_from_args(args)
    runner = ExperimentRunner(spec.output_dir)
    frame, accounting = runner.sum_bench(spec, args.row)
    path = os.path.join(runner.output_dir, "sum_bench.csv")
    frame.to_csv(path, index=False)
    final = frame[frame["round"] == frame["round"].max()]
    _emit({"bench": path, "rounds": int(frame["round"].max()), "max_abs_error": float(final["abs_error"].max()),
           "messages": accounting["messages"]})
    return EXIT_OK


def report_error(exc):
    print(f"error: {exc}", file=sys.stderr)
