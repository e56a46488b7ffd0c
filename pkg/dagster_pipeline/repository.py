from dagster import repository, with_resources

from .assets import centralized_fit, conditional_curves, distributed_fit, fit_comparison, wind_dataset, wind_ppd_em_job
from .ops import failure_sweep_job
from .resources import RESOURCES


@repository
def wind_ppd_em_repository():
    """Repository for the wind distribution pipeline"""

    # Apply resources to assets
    resource_assets = with_resources(
        [wind_dataset, centralized_fit, distributed_fit, fit_comparison, conditional_curves],
        RESOURCES,
    )

    return [
        # Assets
        *resource_assets,

        # Jobs
        wind_ppd_em_job,
        failure_sweep_job,
    ]
