import os

import numpy as np
from dagster import AssetExecutionContext, Field, asset, define_asset_job

from common.settings import get_settings
from gmm.mixture import GmmParams
from processors.experiment_runner import ExperimentSpec
from simnet.audit import audit_privacy

FIT_CONFIG = {
    "n_components": Field(int, default_value=3),
    "topology": Field(str, default_value="case-study"),
    "mode": Field(str, default_value="exact-oracle"),
    "n_bits": Field(int, default_value=get_settings().hash_bits),
    "key_bits": Field(int, default_value=get_settings().key_bits),
    "encrypt_first_round": Field(bool, default_value=True),
    "max_iter": Field(int, default_value=500),
    "cov_floor": Field(float, default_value=1e-8),
    "seed": Field(int, default_value=get_settings().root_seed),
}


def _spec(dataset_path, config):
    return ExperimentSpec(
        data_path=dataset_path,
        topology=config.get("topology", "case-study"),
        mode=config.get("mode", "exact-oracle"),
        n_bits=config.get("n_bits", get_settings().hash_bits),
        key_bits=config.get("key_bits", get_settings().key_bits),
        encrypt_first_round=config.get("encrypt_first_round", True),
        n_components=config.get("n_components", 3),
        max_iter=config.get("max_iter", 500),
        cov_floor=config.get("cov_floor", 1e-8),
        seed=config.get("seed", get_settings().root_seed),
    )


@asset(
    required_resource_keys={"synthetic_source", "data_cleaner"},
    config_schema={
        "n_farms": Field(int, default_value=9),
        "n_hours": Field(int, default_value=480),
        "preset": Field(str, default_value="wind-like"),
        "seed": Field(int, default_value=0),
    },
    description="Cleaned, capacity-normalized wide table of wind power and forecasts",
)
def wind_dataset(context: AssetExecutionContext) -> str:
    """Generate the synthetic dataset and run it through the cleaner"""
    context.log.info("Starting wind dataset asset")
    config = context.op_config or {}
    raw = context.resources.synthetic_source.run(
        n_farms=config.get("n_farms", 9),
        n_rows=config.get("n_hours", 480),
        preset=config.get("preset", "wind-like"),
        seed=config.get("seed", 0),
    )
    result = context.resources.data_cleaner.run(raw["filepath"])

    if result["table"].n_rows == 0:
        context.log.error("Validation failed: cleaned dataset is empty")
        raise ValueError("Wind dataset validation failed")
    context.log.info(f"Wind dataset ready with {result['table'].n_rows} rows at {result['filepath']}")
    return result["filepath"]


@asset(
    required_resource_keys={"experiment_runner"},
    config_schema=FIT_CONFIG,
    description="Centralized EM fit, the benchmark for every distributed run",
)
def centralized_fit(context: AssetExecutionContext, wind_dataset: str) -> dict:
    context.log.info(f"Starting centralized fit on {wind_dataset}")
    runner = context.resources.experiment_runner
    spec = _spec(wind_dataset, context.op_config or {})
    params, trace = runner.run_centralized(runner.load_table(spec), spec.em_config)
    if not trace.converged:
        context.log.warning(f"Centralized EM stopped after {trace.iterations} iterations without converging")
    context.log.info(f"Centralized fit complete: log-likelihood {trace.log_likelihoods[-1]:.4f}")
    return {"params": params.to_dict(), "log_likelihoods": trace.log_likelihoods, "converged": trace.converged}


@asset(
    required_resource_keys={"experiment_runner"},
    deps=["centralized_fit"],
    config_schema=FIT_CONFIG,
    description="Distributed fit over the farm network; every farm's copy of the parameters",
)
def distributed_fit(context: AssetExecutionContext, wind_dataset: str) -> dict:
    context.log.info(f"Starting distributed fit on {wind_dataset}")
    runner = context.resources.experiment_runner
    spec = _spec(wind_dataset, context.op_config or {})
    table = runner.load_table(spec)
    node_params, trace, transport = runner.run_distributed(
        table, runner.topology_for(spec, table), spec.em_config, spec.protocol_config
    )

    # Validate that all farms hold the same parameters
    disagreeing = [m for m, p in enumerate(node_params) if not p.same_as(node_params[0])]
    if disagreeing:
        context.log.error(f"Validation failed: farms {disagreeing} disagree with farm 0")
        raise ValueError("Distributed fit validation failed")
    result = {"params": [p.to_dict() for p in node_params], "trace": trace.to_dict()}
    if transport.network is not None:
        report = audit_privacy(transport.network.privacy_log)
        if report.violations:
            context.log.error(f"Validation failed: {len(report.violations)} messages exposed raw data")
            raise ValueError("Distributed fit validation failed")
        for exposure in report.exposures:
            context.log.warning(f"Privacy audit: {exposure}")
        result["accounting"] = transport.network.accounting.to_dict()
        result["privacy"] = report.to_dict()
    context.log.info(f"Distributed fit complete after {trace.iterations} iterations, {transport.messages} messages")
    return result


@asset(
    required_resource_keys={"experiment_runner", "fit_comparator"},
    config_schema={"max_cdf_rse": Field(float, default_value=1e-3)},
    description="Marginal RSEs against the centralized fit and node-pair KL divergences",
)
def fit_comparison(context: AssetExecutionContext, wind_dataset: str, centralized_fit: dict, distributed_fit: dict) -> dict:
    context.log.info("Starting fit comparison asset")
    table = context.resources.experiment_runner.load_table(ExperimentSpec(data_path=wind_dataset))
    benchmark = GmmParams.from_dict(centralized_fit["params"])
    node_params = [GmmParams.from_dict(p) for p in distributed_fit["params"]]
    result = context.resources.fit_comparator.run(benchmark, node_params, table.stacked)

    limit = (context.op_config or {}).get("max_cdf_rse", 1e-3)
    if result["summary"]["max_cdf_rse"] > limit:
        context.log.error(f"Validation failed: max CDF RSE {result['summary']['max_cdf_rse']:.3e} above {limit}")
        raise ValueError("Fit comparison validation failed")
    context.log.info(f"Fit comparison passed: {result['summary']}")
    return {"summary": result["summary"], "filepaths": result["filepaths"]}


@asset(
    required_resource_keys={"experiment_runner", "conditional_reporter"},
    config_schema={"at_row": Field(int, default_value=0)},
    description="Per-farm conditional forecast-error curves from the distributed and centralized fits",
)
def conditional_curves(context: AssetExecutionContext, wind_dataset: str, centralized_fit: dict, distributed_fit: dict) -> str:
    context.log.info("Starting conditional curves asset")
    table = context.resources.experiment_runner.load_table(ExperimentSpec(data_path=wind_dataset))
    row = (context.op_config or {}).get("at_row", 0)
    y0 = np.asarray(table.forecast[row])
    result = context.resources.conditional_reporter.run(
        GmmParams.from_dict(centralized_fit["params"]),
        [GmmParams.from_dict(p) for p in distributed_fit["params"]],
        y0,
    )
    if not os.path.exists(result["curves"]) or os.path.getsize(result["curves"]) == 0:
        context.log.error("Validation failed: conditional curves file is empty or doesn't exist")
        raise ValueError("Conditional curves validation failed")
    context.log.info(f"Conditional curves saved to {result['curves']}")
    return result["curves"]


# Define an asset job for the pipeline
wind_ppd_em_job = define_asset_job(
    name="wind_ppd_em_job",
    selection=["wind_dataset", "centralized_fit", "distributed_fit", "fit_comparison", "conditional_curves"],
)
