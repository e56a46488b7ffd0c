import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.seeding import derive_seed
from common.settings import get_settings
from gmm.em import EmConfig, fit, initialize, select_components
from gmm.metrics import KLD_SAMPLES, inner_product_relative_errors
from processors.data_cleaner import CsvSchema, load_csv
from processors.data_partitioner import partition_vertical
from processors.fit_comparator import FitComparator, marginal_rse_frame
from protocols.distributed_em import ppd_em_fit
from protocols.inner_product import ProjectionSet, gram_from, sign_hash
from protocols.secure_sum import Keyring, SumConfig, plaintext_first_round, secure_first_round
from protocols.topology import Topology, metropolis_weights, min_agreement, run_consensus
from protocols.transport import MODES, ProtocolConfig, make_transport
from simnet.audit import audit_privacy
from simnet.network import FailurePlan, Network
from sources.synthetic_source import make_synthetic

logger = get_dagster_logger(__name__)

NAMED_TOPOLOGIES = ("case-study", "ring", "random")
BENCH_BITS = tuple(2 ** k for k in range(7, 16, 2))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one experiment needs; loadable from JSON with flag overrides"""

    data_path: str = None
    preset: str = "wind-like"
    n_farms: int = 9
    n_rows: int = 480
    true_components: int = 3
    topology: str = "case-study"
    n_components: int = 3
    max_iter: int = 500
    tol: float = 1e-6
    cov_floor: float = 1e-8
    init: str = "random-responsibilities"
    mode: str = "exact-oracle"
    n_bits: int = field(default_factory=lambda: get_settings().hash_bits)
    encrypt_first_round: bool = True
    key_bits: int = field(default_factory=lambda: get_settings().key_bits)
    failure_cuts: list = field(default_factory=list)
    seed: int = 0
    output_dir: str = None
    kld_samples: int = KLD_SAMPLES
    audit: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown protocol mode {self.mode!r}; expected one of {MODES}")
        if self.data_path is not None and not os.path.exists(self.data_path):
            raise FileNotFoundError(f"Dataset {self.data_path} does not exist")
        if self.topology not in NAMED_TOPOLOGIES and not os.path.exists(self.topology):
            raise FileNotFoundError(f"Topology {self.topology!r} is neither a named topology nor a file")

    @classmethod
    def from_json(cls, path=None, **overrides):
        payload = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as handle:
                payload = json.load(handle)
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"Unknown experiment fields: {sorted(unknown)}")
        payload.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**payload)

    def to_dict(self):
        return asdict(self)

    @property
    def em_config(self):
        return EmConfig(
            n_components=self.n_components,
            max_iter=self.max_iter,
            tol=self.tol,
            cov_floor=self.cov_floor,
            seed=derive_seed(self.seed, "em-init"),
            init=self.init,
        )

    @property
    def protocol_config(self):
        return ProtocolConfig(
            mode=self.mode,
            n_bits=self.n_bits,
            encrypt_first_round=self.encrypt_first_round,
            key_bits=self.key_bits,
            hash_seed=derive_seed(self.seed, "hash-projections"),
            audit=self.audit,
        )

    @property
    def failure_plan(self):
        return FailurePlan(tuple((tuple(edge), tick) for edge, tick in self.failure_cuts))


def build_topology(name, n_farms, seed=0):
    if name == "case-study":
        topology = Topology.case_study()
        if topology.n_nodes != n_farms:
            raise ValueError(f"The case-study topology has {topology.n_nodes} farms, data has {n_farms}")
        return topology
    if name == "ring":
        return Topology.ring(n_farms)
    if name == "random":
        return Topology.random_connected(n_farms, derive_seed(seed, "topology"))
    return Topology.from_json(name)


def _dump(payload, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
    return path


class ExperimentRunner:
    def __init__(self, output_dir=None, comparator=None):
        self.output_dir = output_dir or get_settings().final_dir
        os.makedirs(self.output_dir, exist_ok=True)
        self.comparator = comparator

    def load_table(self, spec):
        if spec.data_path is not None:
            table, report = load_csv(spec.data_path, CsvSchema())
            logger.info(f"Loaded {report.rows_kept} of {report.rows_read} rows from {spec.data_path}")
            return table
        table, _ = make_synthetic(spec.n_farms, spec.n_rows, spec.preset, spec.seed, spec.true_components)
        return table

    def topology_for(self, spec, table):
        return build_topology(spec.topology, table.n_farms, spec.seed)

    def shared_init(self, table, config):
        """k-means++ needs whole rows, so the harness seeds both fits with the same start"""
        if config.init == "kmeans++":
            return initialize(table.stacked, config)
        return None

    def run_centralized(self, table, config, init=None):
        return fit(table.stacked, config, init=init)

    def run_distributed(self, table, topology, config, protocol, init=None, failure_plan=None):
        slices = partition_vertical(table)
        transport = make_transport(
            topology, protocol, failure_plan, raw_values=table.stacked if protocol.audit else None
        )
        node_params, trace = ppd_em_fit(slices, topology, config, protocol, init=init, transport=transport)
        return node_params, trace, transport

    def fit(self, spec, name="fit", centralized=True, distributed=True):
        """Centralized benchmark and/or distributed fit, compared and written as one bundle"""
        table = self.load_table(spec)
        topology = self.topology_for(spec, table)
        config = spec.em_config
        init = self.shared_init(table, config)
        bundle_dir = os.path.join(spec.output_dir or self.output_dir, name)
        os.makedirs(bundle_dir, exist_ok=True)
        result = {"spec": spec.to_dict(), "bundle_dir": bundle_dir, "converged": True}

        benchmark = None
        if centralized:
            benchmark, trace = self.run_centralized(table, config, init)
            result["centralized"] = {"params": benchmark.to_dict(), "trace": asdict(trace)}
            result["converged"] &= trace.converged
        if distributed:
            node_params, trace, transport = self.run_distributed(
                table, topology, config, spec.protocol_config, init, spec.failure_plan
            )
            result["distributed"] = {
                "params": [p.to_dict() for p in node_params],
                "trace": trace.to_dict(),
                "protocol": spec.protocol_config.to_dict(),
                "topology": topology.to_dict(),
            }
            if transport.network is not None:
                result["distributed"]["accounting"] = transport.network.accounting.to_dict()
                result["distributed"]["privacy"] = audit_privacy(transport.network.privacy_log).to_dict()
                result["distributed"]["run_tag"] = transport.network.tag
            result["converged"] &= trace.converged
            if benchmark is not None:
                comparator = self.comparator or FitComparator(bundle_dir, spec.kld_samples, derive_seed(spec.seed, "kld"))
                comparison = comparator.run(benchmark, node_params, table.stacked, name="comparison")
                result["comparison"] = comparison["summary"]
                if trace.inner_product_errors:
                    result["comparison"]["inner_product_mean_relative_error"] = trace.mean_inner_product_error
        _dump({k: v for k, v in result.items() if k != "bundle_dir"}, os.path.join(bundle_dir, "bundle.json"))
        logger.info(f"Saved result bundle to {bundle_dir}")
        return result

    def select_components(self, spec, candidates):
        """BIC over candidate J on the stacked data; the chosen row is flagged"""
        table = self.load_table(spec)
        rows = pd.DataFrame(select_components(table.stacked, candidates, spec.em_config))
        rows["chosen"] = rows["bic"] == rows["bic"].min()
        return rows

    def failure_sweep(self, spec, edges=None, name="failure_sweep"):
        """Rerun the distributed fit once per single-line cut and compare CDFs with the uncut run"""
        table = self.load_table(spec)
        topology = self.topology_for(spec, table)
        config = spec.em_config
        protocol = spec.protocol_config
        init = self.shared_init(table, config)
        edges = topology.edges if edges is None else [tuple(e) for e in edges]
        if protocol.mode == "exact-oracle":
            raise ValueError("Line cuts only act on the full protocol; run the failure sweep with mode='full-protocol'")
        baseline, baseline_trace, _ = self.run_distributed(table, topology, config, protocol, init)
        rows = [
            {"edge": "none", "status": "baseline", "max_cdf_rse": 0.0, "max_pdf_rse": 0.0,
             "iterations": baseline_trace.iterations, "converged": baseline_trace.converged}
        ]
        for edge in edges:
            plan = FailurePlan.single_cut(edge, 0)
            label = f"{edge[0]}-{edge[1]}"
            if plan.check(topology) == "disconnected":
                logger.warning(f"Cut {label} disconnects the topology; skipped")
                rows.append({"edge": label, "status": "disconnected", "max_cdf_rse": None, "max_pdf_rse": None,
                             "iterations": 0, "converged": None})
                continue
            node_params, trace, _ = self.run_distributed(table, topology, config, protocol, init, plan)
            rse_table = marginal_rse_frame(baseline[0], node_params, table.stacked)
            rows.append(
                {
                    "edge": label,
                    "status": "connected",
                    "max_cdf_rse": float(rse_table["cdf_rse"].max()),
                    "max_pdf_rse": float(rse_table["pdf_rse"].max()),
                    "iterations": trace.iterations,
                    "converged": trace.converged,
                }
            )
            logger.info(f"Cut {label}: max CDF RSE {rows[-1]['max_cdf_rse']:.3e}")
        report = pd.DataFrame(rows, columns=["edge", "status", "max_cdf_rse", "max_pdf_rse", "iterations", "converged"])
        path = os.path.join(spec.output_dir or self.output_dir, f"{name}.csv")
        report.to_csv(path, index=False)
        return report, path

    def inner_product_bench(self, spec, bits=BENCH_BITS, n_seeds=10):
        """Mean relative error of hashed inner products between the farms' power columns, per L and seed"""
        table = self.load_table(spec)
        vectors = table.power.T
        exact = vectors @ vectors.T
        rows = []
        for seed in range(n_seeds):
            for n_bits in bits:
                projections = ProjectionSet(derive_seed(spec.seed, f"bench/{seed}"), vectors.shape[1], n_bits)
                estimate = gram_from([sign_hash(v, projections) for v in vectors], np.linalg.norm(vectors, axis=1))
                errors = inner_product_relative_errors(estimate.matrix, exact)
                rows.append({"n_bits": n_bits, "seed": seed, "mean_relative_error": float(errors.mean())})
            logger.debug(f"Inner-product bench seed {seed} done")
        return pd.DataFrame(rows, columns=["n_bits", "seed", "mean_relative_error"])

    def sum_bench(self, spec, row=0):
        """Per-round node estimates of the sum of one hour's power column"""
        table = self.load_table(spec)
        topology = self.topology_for(spec, table)
        weights = metropolis_weights(topology)
        values = table.power[row].reshape(-1, 1)
        protocol = spec.protocol_config
        network = Network(topology)
        if protocol.encrypt_first_round:
            config = SumConfig(key_bits=protocol.key_bits, private_seeds=protocol.private_seeds)
            keyring = Keyring(config.key_bits, config.private_seeds)
            first, _ = secure_first_round(values, weights, config, keyring, network)
        else:
            first = plaintext_first_round(values, weights, network)
        M = topology.n_nodes
        history = [values, first]
        result = run_consensus(first, weights, tolerance=protocol.tolerance, network=network, keep_history=True)
        history += result.history[1:]
        history.append(min_agreement(result.values, weights, network))
        true_sum = float(values.sum())
        frame = pd.DataFrame(
            [
                {"round": r, "node": m, "value": float(state[m, 0] * M), "true_sum": true_sum}
                for r, state in enumerate(history)
                for m in range(M)
            ]
        )
        frame["abs_error"] = (frame["value"] - frame["true_sum"]).abs()
        return frame, network.accounting.to_dict()
