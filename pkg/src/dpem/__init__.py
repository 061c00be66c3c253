"""Differentially private EM for latent-variable models.

Robust-mean based noisy gradient EM with zCDP accounting, three latent
models (gmm, mrm, rmc), estimator classes, and a benchmark CLI.
"""

from .accounting import (
    PrivacyBudget,
    gaussian_sigma_for_zcdp,
    make_budget,
    split_budget_alg1,
    split_budget_alg2,
    zcdp_to_approx_dp,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    ParseError,
)
from .estimators import (
    ClippedDPGradientEM,
    DPEMGaussianMixture,
    DPGradientEM,
    GradientEM,
    IterationTrace,
    clipped_dp_gradient_em,
    dp_em_gmm,
    dp_gradient_em,
    estimation_error,
    gradient_em,
    initial_beta,
)
from .models import (
    MODEL_KINDS,
    GroundTruth,
    ModelSpec,
    ObservationSet,
    f_gmm,
    grad_q,
    preprocess_real_gmm,
    q_value,
    sample_observations,
    tau_bound,
)
from .numeric import (
    RngStream,
    expectation_under_gaussian,
    max_eigenvalue,
    sample_gaussian,
    sample_rademacher,
    std_normal_cdf,
)
from .robust import (
    PHI_BOUND,
    RobustMeanParams,
    central_dp_mean,
    correction_C,
    local_dp_mean,
    phi,
    robust_mean,
    select_params_central,
    select_params_nonprivate,
    select_params_local,
    smoothed_phi,
)

__version__ = "0.1.0"

__all__ = [
    "PHI_BOUND",
    "MODEL_KINDS",
    "ClippedDPGradientEM",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DomainError",
    "DPEMGaussianMixture",
    "DPGradientEM",
    "GradientEM",
    "GroundTruth",
    "IterationTrace",
    "ModelSpec",
    "ObservationSet",
    "ParseError",
    "PrivacyBudget",
    "RngStream",
    "RobustMeanParams",
    "central_dp_mean",
    "clipped_dp_gradient_em",
    "correction_C",
    "dp_em_gmm",
    "dp_gradient_em",
    "estimation_error",
    "expectation_under_gaussian",
    "f_gmm",
    "gaussian_sigma_for_zcdp",
    "grad_q",
    "gradient_em",
    "initial_beta",
    "local_dp_mean",
    "make_budget",
    "max_eigenvalue",
    "phi",
    "preprocess_real_gmm",
    "q_value",
    "robust_mean",
    "sample_gaussian",
    "sample_observations",
    "sample_rademacher",
    "select_params_central",
    "select_params_nonprivate",
    "select_params_local",
    "smoothed_phi",
    "split_budget_alg1",
    "split_budget_alg2",
    "std_normal_cdf",
    "tau_bound",
    "zcdp_to_approx_dp",
]
