"""Pretesting and conditionally valid inference for difference-in-differences."""

from .core import (
    SeverityParams,
    ThetaEstimate,
    TimeLayout,
    ViolationMode,
    iterative_to_overall,
    overall_to_iterative,
    transform_theta_to_overall,
)
from .estimators import (
    BootstrapConfig,
    DataError,
    Dataset,
    Design,
    ResampleLevel,
    estimate_covariance_bootstrap,
    estimate_theta_sample_means,
    estimate_theta_twfe,
)
from .inference import (
    InferenceParams,
    IntervalReport,
    confidence_interval,
    critical_value,
    psi_statistic,
)
from .io import read_dataset, read_matrix
from .pretest import PretestResult, run_pretest
from .severity import bias_bound, kappa, kappa_lin, severity, worst_case_post_violations

__version__ = "0.1.0"
