import pandas as pd
from dagster import Field, In, OpExecutionContext, Out, job, op

from common.settings import get_settings
from dagster_pipeline.resources import RESOURCES
from processors.experiment_runner import ExperimentSpec


@op(
    out=Out(dict),
    config_schema={
        "n_farms": Field(int, default_value=9),
        "n_hours": Field(int, default_value=480),
        "seed": Field(int, default_value=0),
        "topology": Field(str, default_value="case-study"),
        "n_components": Field(int, default_value=3),
        "n_bits": Field(int, default_value=get_settings().hash_bits),
        "key_bits": Field(int, default_value=get_settings().key_bits),
        "encrypt_first_round": Field(bool, default_value=True),
        "max_iter": Field(int, default_value=500),
        "cov_floor": Field(float, default_value=1e-8),
    },
    required_resource_keys={"synthetic_source"},
)
def prepare_sweep_inputs(context: OpExecutionContext) -> dict:
    """Write the dataset the sweep runs on and return the experiment spec"""
    config = context.op_config
    context.log.info(f"Preparing failure sweep inputs: {config['n_farms']} farms, {config['n_hours']} hours")
    raw = context.resources.synthetic_source.run(
        n_farms=config["n_farms"], n_rows=config["n_hours"], seed=config["seed"], name="sweep"
    )
    spec = ExperimentSpec(
        data_path=raw["filepath"],
        topology=config["topology"],
        mode="full-protocol",
        n_components=config["n_components"],
        n_bits=config["n_bits"],
        key_bits=config["key_bits"],
        encrypt_first_round=config["encrypt_first_round"],
        max_iter=config["max_iter"],
        cov_floor=config["cov_floor"],
        seed=config["seed"],
    )
    context.log.info(f"Sweep dataset saved to {raw['filepath']}")
    return spec.to_dict()


@op(
    ins={"spec": In(dict)},
    out=Out(str),
    required_resource_keys={"experiment_runner"},
)
def sweep_edge_cuts(context: OpExecutionContext, spec: dict) -> str:
    """Rerun the distributed fit once per single-line cut"""
    context.log.info("Starting failure sweep operation")
    report, path = context.resources.experiment_runner.failure_sweep(ExperimentSpec(**spec))
    skipped = int((report["status"] == "disconnected").sum())
    context.log.info(f"Failure sweep complete: {len(report) - 1 - skipped} cuts run, {skipped} skipped. Saved to {path}")
    return path


@op(
    ins={"report_filepath": In(str)},
    out=Out(bool),
    config_schema={"max_cdf_rse": Field(float, default_value=1e-6)},
)
def validate_sweep(context: OpExecutionContext, report_filepath: str) -> bool:
    """Every connected cut must reproduce the uncut CDFs"""
    context.log.info(f"Validating failure sweep at {report_filepath}")
    report = pd.read_csv(report_filepath)
    connected = report[report["status"] == "connected"]
    limit = context.op_config["max_cdf_rse"]
    failing = connected[connected["max_cdf_rse"] > limit]
    if len(failing):
        context.log.error(f"Validation failed: cuts {failing['edge'].tolist()} exceed CDF RSE {limit}")
        return False
    unconverged = connected[~connected["converged"].astype(bool)]
    if len(unconverged):
        context.log.error(f"Validation failed: cuts {unconverged['edge'].tolist()} did not converge")
        return False
    context.log.info(f"Sweep validation passed for {len(connected)} cuts")
    return True


@job(resource_defs=RESOURCES)
def failure_sweep_job():
    validate_sweep(sweep_edge_cuts(prepare_sweep_inputs()))
