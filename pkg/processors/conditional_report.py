import os

import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.errors import AgreementError
from common.settings import get_settings
from gmm.conditional import derive_conditional, forecast_exponent_shares
from gmm.metrics import CurveGrid, rse
from protocols.secure_sum import SumConfig, ppd_sum

logger = get_dagster_logger(__name__)

ERROR_GRID_POINTS = 512


def error_grid(points=ERROR_GRID_POINTS, half_width=1.0):
    """Forecast errors of normalized power lie in [-1, 1]"""
    return np.linspace(-half_width, half_width, points)


def summed_exponents(params, y0, topology, config=None):
    """Per-node copies of every component's forecast exponent, summed from per-farm shares with ppd_sum"""
    config = config or SumConfig()
    shares = np.stack([forecast_exponent_shares(params, j, y0) for j in range(params.n_components)], axis=1)
    return ppd_sum(shares, topology, config=config, phase="conditional").values


def conditional_curves(params, m, y0, grid, exponent_sums=None):
    dist = derive_conditional(params, m, y0, exponent_sums)
    return CurveGrid(x=grid, values=dist.pdf(grid), kind="pdf"), CurveGrid(x=grid, values=dist.cdf(grid), kind="cdf")


class ConditionalReporter:
    def __init__(self, final_dir=None):
        self.final_dir = final_dir or get_settings().final_dir
        os.makedirs(self.final_dir, exist_ok=True)

    def report(self, benchmark, node_params, y0, grid=None, topology=None):
        """Farm m's conditional error curves from its own fitted mixture vs the centralized one.

        With a ``topology`` the exponents of the distributed curves are summed
        over the network instead of evaluated from the whole forecast block.
        """
        grid = error_grid() if grid is None else np.asarray(grid, dtype=float)
        y0 = np.asarray(y0, dtype=float).reshape(-1)
        network_sums = None
        if topology is not None:
            if not all(p.same_as(node_params[0]) for p in node_params):
                raise AgreementError("Farms must hold identical parameters to sum exponents over the network")
            network_sums = summed_exponents(node_params[0], y0, topology)
        curves, rows = [], []
        for m, params in enumerate(node_params):
            exponent_sums = None if network_sums is None else network_sums[m]
            bench_pdf, bench_cdf = conditional_curves(benchmark, m, y0, grid)
            pdf, cdf = conditional_curves(params, m, y0, grid, exponent_sums)
            rows.append({"node": m, "pdf_rse": rse(pdf, bench_pdf), "cdf_rse": rse(cdf, bench_cdf)})
            for series, curve in (("centralized", bench_pdf), ("centralized", bench_cdf), ("distributed", pdf), ("distributed", cdf)):
                curves.append(
                    pd.DataFrame({"x": grid, "value": curve.values, "series": series, "node": m, "kind": curve.kind})
                )
        rse_table = pd.DataFrame(rows, columns=["node", "pdf_rse", "cdf_rse"])
        logger.info(f"Conditional curves for {len(node_params)} farms, max CDF RSE {rse_table['cdf_rse'].max():.3e}")
        return pd.concat(curves, ignore_index=True), rse_table

    def run(self, benchmark, node_params, y0, name="conditional", grid=None, topology=None):
        curves, rse_table = self.report(benchmark, node_params, y0, grid, topology)
        curves_path = os.path.join(self.final_dir, f"{name}_curves.csv")
        rse_path = os.path.join(self.final_dir, f"{name}_rse.csv")
        curves.to_csv(curves_path, index=False)
        rse_table.to_csv(rse_path, index=False)
        logger.info(f"Saved conditional curves to {curves_path}")
        return {"curves": curves_path, "rse": rse_path, "rse_table": rse_table}
