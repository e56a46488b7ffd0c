from dagster import Field, resource


@resource(config_schema={"output_dir": Field(str, is_required=False)}, description="Synthetic wind data generator")
def synthetic_source_resource(context):
    """Resource for the synthetic wind source"""
    from sources.synthetic_source import SyntheticWindSource
    return SyntheticWindSource((context.resource_config or {}).get("output_dir"))


@resource
def data_cleaner_resource(context):
    """Resource for the wind data cleaner"""
    from processors.data_cleaner import WindDataCleaner
    return WindDataCleaner()


@resource
def experiment_runner_resource(context):
    """Resource for the experiment runner"""
    from processors.experiment_runner import ExperimentRunner
    return ExperimentRunner()


@resource
def fit_comparator_resource(context):
    """Resource for the fit comparator"""
    from processors.fit_comparator import FitComparator
    return FitComparator()


@resource
def conditional_reporter_resource(context):
    """Resource for the conditional reporter"""
    from processors.conditional_report import ConditionalReporter
    return ConditionalReporter()


RESOURCES = {
    "synthetic_source": synthetic_source_resource,
    "data_cleaner": data_cleaner_resource,
    "experiment_runner": experiment_runner_resource,
    "fit_comparator": fit_comparator_resource,
    "conditional_reporter": conditional_reporter_resource,
}
