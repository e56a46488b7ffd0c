import json
import os

import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.settings import get_settings
from gmm.metrics import KLD_SAMPLES, empirical_cdf, evaluation_grid, gmm_kld, marginal_pdf_cdf, rse

logger = get_dagster_logger(__name__)


def dimension_label(dim, n_farms):
    return f"power_{dim + 1}" if dim < n_farms else f"forecast_{dim - n_farms + 1}"


def marginal_rse_frame(benchmark, node_params, observations):
    """RSE of every node's 1-D marginal PDF and CDF against the benchmark, per dimension"""
    observations = np.asarray(observations, dtype=float)
    n_farms = benchmark.dim // 2
    rows = []
    for dim in range(benchmark.dim):
        grid = evaluation_grid(observations[:, dim])
        bench_pdf, bench_cdf = marginal_pdf_cdf(benchmark, dim, grid)
        for node, params in enumerate(node_params):
            pdf, cdf = marginal_pdf_cdf(params, dim, grid)
            rows.append(
                {
                    "node": node,
                    "dim": dim,
                    "label": dimension_label(dim, n_farms),
                    "pdf_rse": rse(pdf, bench_pdf),
                    "cdf_rse": rse(cdf, bench_cdf),
                }
            )
    return pd.DataFrame(rows, columns=["node", "dim", "label", "pdf_rse", "cdf_rse"])


def kld_matrix(node_params, samples=KLD_SAMPLES, seed=0):
    """Pairwise KL(node a || node b) estimates and their standard errors"""
    size = len(node_params)
    values = np.zeros((size, size))
    stderrs = np.zeros((size, size))
    for a in range(size):
        for b in range(size):
            if a == b:
                continue
            estimate = gmm_kld(node_params[a], node_params[b], samples=samples, seed=seed)
            values[a, b] = estimate.value
            stderrs[a, b] = estimate.stderr
    return values, stderrs


def curve_frame(benchmark, node_params, observations, series="distributed"):
    """Tidy plot data (x, value, series, node, dim, kind) with empirical CDFs alongside"""
    observations = np.asarray(observations, dtype=float)
    frames = []
    for dim in range(benchmark.dim):
        grid = evaluation_grid(observations[:, dim])
        curves = [("centralized", None, marginal_pdf_cdf(benchmark, dim, grid))]
        curves += [(series, node, marginal_pdf_cdf(p, dim, grid)) for node, p in enumerate(node_params)]
        for name, node, (pdf, cdf) in curves:
            for curve in (pdf, cdf):
                frames.append(
                    pd.DataFrame({"x": grid, "value": curve.values, "series": name, "node": node, "dim": dim, "kind": curve.kind})
                )
        empirical = empirical_cdf(observations[:, dim], grid)
        frames.append(
            pd.DataFrame({"x": grid, "value": empirical.values, "series": "empirical", "node": None, "dim": dim, "kind": "cdf"})
        )
    return pd.concat(frames, ignore_index=True)


class FitComparator:
    def __init__(self, final_dir=None, kld_samples=KLD_SAMPLES, seed=0):
        self.final_dir = final_dir or get_settings().final_dir
        self.kld_samples = kld_samples
        self.seed = seed
        os.makedirs(self.final_dir, exist_ok=True)

    def compare(self, benchmark, node_params, observations):
        """Marginal RSEs against the centralized benchmark plus node-pair KLDs"""
        logger.info(f"Comparing {len(node_params)} node fits against the centralized benchmark")
        rse_table = marginal_rse_frame(benchmark, node_params, observations)
        kld, kld_stderr = kld_matrix(node_params, self.kld_samples, self.seed)
        summary = {
            "max_pdf_rse": float(rse_table["pdf_rse"].max()) if len(rse_table) else 0.0,
            "max_cdf_rse": float(rse_table["cdf_rse"].max()) if len(rse_table) else 0.0,
            "max_node_kld": float(kld.max()) if kld.size else 0.0,
        }
        return {"rse": rse_table, "kld": kld, "kld_stderr": kld_stderr, "summary": summary}

    def metric_bundle(self, comparison):
        """(metric, value, stderr) rows for CSV export"""
        rows = [{"metric": name, "value": value, "stderr": None} for name, value in comparison["summary"].items()]
        kld, stderr = comparison["kld"], comparison["kld_stderr"]
        for a in range(kld.shape[0]):
            for b in range(kld.shape[1]):
                if a != b:
                    rows.append({"metric": f"kld_{a}_{b}", "value": kld[a, b], "stderr": stderr[a, b]})
        return pd.DataFrame(rows, columns=["metric", "value", "stderr"])

    def export(self, comparison, name="fit_comparison", curves=None):
        """Write the RSE table, metric bundle, summary JSON and optional curves; returns the paths"""
        paths = {
            "rse": os.path.join(self.final_dir, f"{name}_rse.csv"),
            "metrics": os.path.join(self.final_dir, f"{name}_metrics.csv"),
            "summary": os.path.join(self.final_dir, f"{name}.json"),
        }
        comparison["rse"].to_csv(paths["rse"], index=False)
        self.metric_bundle(comparison).to_csv(paths["metrics"], index=False)
        with open(paths["summary"], "w", encoding="utf-8") as handle:
            json.dump({**comparison["summary"], "kld": comparison["kld"].tolist()}, handle, indent=2, sort_keys=True)
        if curves is not None:
            paths["curves"] = os.path.join(self.final_dir, f"{name}_curves.csv")
            curves.to_csv(paths["curves"], index=False)
        logger.info(f"Saved comparison to {paths['summary']}")
        return paths

    def run(self, benchmark, node_params, observations, name="fit_comparison"):
        comparison = self.compare(benchmark, node_params, observations)
        paths = self.export(comparison, name, curve_frame(benchmark, node_params, observations))
        return {"filepaths": paths, **comparison}
